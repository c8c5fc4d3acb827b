#include <iostream>

#include "ltq/cli.hpp"

int main(int argc, char** argv) {
    return ltq::cli_main(argc, argv, std::cout, std::cerr);
}
