#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "r2ag/common.hpp"
#include "r2ag/rng.hpp"

namespace r2ag {

struct GradientBundle;

/// Two-layer policy weights.
///
/// w1 maps the 5d input [group state (4d) || projected concept state (d)] to a
/// 4d hidden layer, w2 maps hidden to the 4d query z, and m is the d x d
/// projection applied to the explored-concept average.
struct PolicyParams {
    std::size_t dim = 0;
    std::uint64_t seed = 0;
    Matrix w1;
    Matrix w2;
    Matrix m;

    /// Glorot-uniform initialization on the open interval (-a, a).
    static PolicyParams init(std::size_t d, std::uint64_t seed)
    {
        if (d < 2) {
            throw std::invalid_argument("policy dimension must be >= 2");
        }
        PolicyParams p;
        p.dim = d;
        p.seed = seed;
        Rng rng(seed);
        auto fill = [&rng](Eigen::Index rows, Eigen::Index cols) {
            const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
            Matrix w(rows, cols);
            for (Eigen::Index i = 0; i < rows; ++i) {
                for (Eigen::Index j = 0; j < cols; ++j) {
                    w(i, j) = (2.0 * bits_to_open_unit(rng.next_u64()) - 1.0) * a;
                }
            }
            return w;
        };
        const auto n = static_cast<Eigen::Index>(d);
        p.w1 = fill(4 * n, 5 * n);
        p.w2 = fill(4 * n, 4 * n);
        p.m = fill(n, n);
        return p;
    }

    void add_scaled(double scale, const GradientBundle& g);

    [[nodiscard]] bool all_finite() const { return w1.allFinite() && w2.allFinite() && m.allFinite(); }

    friend bool operator==(const PolicyParams& a, const PolicyParams& b)
    {
        auto same = [](const Matrix& x, const Matrix& y) {
            return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
        };
        return a.dim == b.dim && a.seed == b.seed && same(a.w1, b.w1) && same(a.w2, b.w2) && same(a.m, b.m);
    }
};

struct GradientBundle {
    Matrix w1;
    Matrix w2;
    Matrix m;

    static GradientBundle zeros_like(const PolicyParams& p)
    {
        return {Matrix::Zero(p.w1.rows(), p.w1.cols()), Matrix::Zero(p.w2.rows(), p.w2.cols()),
                Matrix::Zero(p.m.rows(), p.m.cols())};
    }

    void add_scaled(double scale, const GradientBundle& g)
    {
        w1 += scale * g.w1;
        w2 += scale * g.w2;
        m += scale * g.m;
    }

    [[nodiscard]] double max_abs() const
    {
        return std::max({w1.cwiseAbs().maxCoeff(), w2.cwiseAbs().maxCoeff(), m.cwiseAbs().maxCoeff()});
    }
};

inline void PolicyParams::add_scaled(double scale, const GradientBundle& g)
{
    w1 += scale * g.w1;
    w2 += scale * g.w2;
    m += scale * g.m;
}

/// Everything the backward pass needs, plus the inputs so a step can be replayed.
struct ForwardCache {
    Vector group_state;    // 4d
    Vector concept_avg;    // d, before projection
    Matrix actions;        // |A| x 4d
    Vector input;          // [group_state || m * concept_avg]
    Vector hidden_pre;     // w1 * input
    Vector hidden;         // relu(hidden_pre)
    Vector z;              // w2 * hidden
    Vector logits;         // actions * z
    Vector probs;          // softmax(logits)
};

/// Softmax with max subtraction.
inline Vector softmax(const Vector& logits)
{
    const double mx = logits.maxCoeff();
    Vector e = (logits.array() - mx).exp().matrix();
    return e / e.sum();
}

inline ForwardCache forward(const PolicyParams& p, const Vector& group_state, const Vector& concept_avg,
                            const Matrix& actions)
{
    const auto d = static_cast<Eigen::Index>(p.dim);
    if (group_state.size() != 4 * d || concept_avg.size() != d || actions.cols() != 4 * d || actions.rows() < 1) {
        throw std::invalid_argument("policy forward: shape mismatch");
    }
    ForwardCache c;
    c.group_state = group_state;
    c.concept_avg = concept_avg;
    c.actions = actions;
    c.input.resize(5 * d);
    c.input.head(4 * d) = group_state;
    c.input.tail(d) = p.m * concept_avg;
    c.hidden_pre = p.w1 * c.input;
    c.hidden = c.hidden_pre.cwiseMax(0.0);
    c.z = p.w2 * c.hidden;
    c.logits = actions * c.z;
    c.probs = softmax(c.logits);
    return c;
}

/// Inverse-CDF draw from a single uniform.
inline std::size_t sample_action(const Vector& probs, Rng& rng)
{
    const double u = rng.uniform();
    double cdf = 0.0;
    std::size_t last_positive = 0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        if (probs[i] > 0.0) {
            last_positive = static_cast<std::size_t>(i);
        }
        cdf += probs[i];
        if (u < cdf) {
            return static_cast<std::size_t>(i);
        }
    }
    return last_positive;  // rounding left cdf slightly below 1
}

/// Argmax; ties go to the smallest index.
inline std::size_t greedy_action(const Vector& probs)
{
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < probs.size(); ++i) {
        if (probs[i] > probs[best]) {
            best = i;
        }
    }
    return static_cast<std::size_t>(best);
}

/// Gradient of log probs[action] with respect to w1, w2 and m.
inline GradientBundle logprob_backward(const PolicyParams& p, const ForwardCache& c, std::size_t action)
{
    const auto d = static_cast<Eigen::Index>(p.dim);
    if (c.input.size() != 5 * d || c.z.size() != 4 * d || static_cast<Eigen::Index>(action) >= c.probs.size()) {
        throw std::invalid_argument("logprob_backward: cache does not match parameters");
    }
    Vector dlogits = -c.probs;
    dlogits[static_cast<Eigen::Index>(action)] += 1.0;
    const Vector dz = c.actions.transpose() * dlogits;

    GradientBundle g;
    g.w2 = dz * c.hidden.transpose();
    Vector dh = p.w2.transpose() * dz;
    for (Eigen::Index i = 0; i < dh.size(); ++i) {
        if (c.hidden_pre[i] <= 0.0) {
            dh[i] = 0.0;
        }
    }
    g.w1 = dh * c.input.transpose();
    const Vector dprojected = (p.w1.transpose() * dh).tail(d);
    g.m = dprojected * c.concept_avg.transpose();
    return g;
}

inline nlohmann::ordered_json matrix_to_json(const Matrix& m)
{
    auto rows = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        auto row = nlohmann::ordered_json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            row.push_back(m(i, j));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols, const char* name)
{
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
        throw DataError(std::string("checkpoint: matrix ") + name + " has wrong row count");
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
            throw DataError(std::string("checkpoint: matrix ") + name + " has wrong column count");
        }
        for (Eigen::Index k = 0; k < cols; ++k) {
            const auto& v = row[static_cast<std::size_t>(k)];
            if (!v.is_number()) {
                throw DataError(std::string("checkpoint: matrix ") + name + " has a non-numeric entry");
            }
            m(i, k) = v.get<double>();
        }
    }
    return m;
}

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::ordered_json checkpoint_json(const PolicyParams& p)
{
    return nlohmann::ordered_json{{"version", kCheckpointVersion},
                                  {"d", p.dim},
                                  {"seed", p.seed},
                                  {"W1", matrix_to_json(p.w1)},
                                  {"W2", matrix_to_json(p.w2)},
                                  {"M", matrix_to_json(p.m)}};
}

inline PolicyParams params_from_json(const nlohmann::json& j)
{
    try {
        if (j.at("version").get<int>() != kCheckpointVersion) {
            throw DataError("checkpoint: unsupported version");
        }
        PolicyParams p;
        p.dim = j.at("d").get<std::size_t>();
        p.seed = j.at("seed").get<std::uint64_t>();
        if (p.dim < 2) {
            throw DataError("checkpoint: d must be >= 2");
        }
        const auto d = static_cast<Eigen::Index>(p.dim);
        p.w1 = matrix_from_json(j.at("W1"), 4 * d, 5 * d, "W1");
        p.w2 = matrix_from_json(j.at("W2"), 4 * d, 4 * d, "W2");
        p.m = matrix_from_json(j.at("M"), d, d, "M");
        if (!p.all_finite()) {
            throw DataError("checkpoint: non-finite weight");
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const PolicyParams& p, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << checkpoint_json(p).dump() << '\n';
}

inline PolicyParams load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return params_from_json(j);
}

}  // namespace r2ag
