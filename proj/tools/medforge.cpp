#include "medforge/cli.hpp"

int main(int argc, char** argv) { return medforge::cli::dispatch(argc, argv); }
