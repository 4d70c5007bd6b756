#include "fluency/cli.hpp"

int main(int argc, char** argv) { return fluency::cli::run(argc, argv); }
