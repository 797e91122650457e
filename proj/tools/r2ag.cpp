#include "cli.hpp"

int main(int argc, char** argv)
{
    return r2ag::cli::run(argc, argv);
}
