#include <fusemap/cli.hpp>

int main(int argc, char** argv) { return fusemap::cli::run(argc, argv); }
