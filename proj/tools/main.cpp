#include <iostream>
#include <string>
#include <vector>

#include "motortemp/cli.hpp"

int main(int argc, char** argv) {
    return motortemp::cli::dispatch(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
