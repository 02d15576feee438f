#include <iostream>

#include "blend/cli.hpp"

int main(int argc, char** argv) {
    return blend::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
