#include <iostream>

#include "cusco/cli.hpp"

int main(int argc, char **argv)
{
	return cusco::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
