#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace r2ag {

/// String identifier tagged with the domain it belongs to, so a concept id
/// cannot be passed where a group id is expected.
template <class Tag>
class StrongId {
public:
    StrongId() = default;
    explicit StrongId(std::string value) : value_(std::move(value)) {}

    [[nodiscard]] const std::string& str() const noexcept { return value_; }
    [[nodiscard]] bool empty() const noexcept { return value_.empty(); }

    friend auto operator<=>(const StrongId&, const StrongId&) = default;
    friend bool operator==(const StrongId&, const StrongId&) = default;

private:
    std::string value_;
};

using ConceptId = StrongId<struct ConceptTag>;
using GroupId = StrongId<struct GroupTag>;

// Dense indexes assigned at load time. Index order equals lexicographic id
// order, so "smallest id" tie-breaking is "smallest index".
using ConceptIndex = std::uint32_t;
using GroupIndex = std::uint32_t;
using LabelIndex = std::uint32_t;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Input data that violates a file format or graph invariant.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace r2ag

template <class Tag>
struct std::hash<r2ag::StrongId<Tag>> {
    std::size_t operator()(const r2ag::StrongId<Tag>& id) const noexcept
    {
        return std::hash<std::string>{}(id.str());
    }
};
