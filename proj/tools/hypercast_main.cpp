#include <iostream>

#include "hypercast/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return hypercast::cli::run(args, std::cout, std::cerr);
}
