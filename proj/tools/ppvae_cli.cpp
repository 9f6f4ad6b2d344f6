#include "ppvae/cli.hpp"

#include <iostream>

int main(int argc, char **argv)
{
    return ppvae::cli::run(argc, argv, std::cout, std::cerr);
}
