#include <iostream>

#include "attn_sieve_cli.hpp"

int main(int argc, char** argv) {
  return attn_sieve::cli::run(argc, argv, std::cout, std::cerr);
}
