// Writes the reference weight file used by the infer and pipeline tests.
#include <iostream>

#include "stainnorm/reference_weights.hpp"

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: make_reference_weights <out.saas>\n";
        return 1;
    }
    try {
        const stainnorm::GeneratorWeights w = stainnorm::identity_weights();
        stainnorm::validate_weights(w);
        stainnorm::save_weights(w, argv[1]);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
