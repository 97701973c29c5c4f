#include "inrsynth/cli.hpp"

int main(int argc, char** argv) { return inrsynth::cli::run(argc, argv); }
