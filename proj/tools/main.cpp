#include "tvb/experiment.hpp"
#include "tvb/linalg.hpp"

int main(int argc, char** argv) {
    tvb::linalg::ensure_fast_blas(argv);
    return tvb::run_cli(argc, argv);
}
