#include <vector>

#include "moyun/cli/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return moyun::cli::dispatch(args).exit_code;
}
