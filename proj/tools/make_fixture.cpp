// Writes a small synthetic feature store, brain target, ROI map, label masks
// and a matching config file, enough to run every alignedcut command.
#include "cli/fixture.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Write a synthetic alignedcut fixture"};
    std::filesystem::path out = "fixture";
    alignedcut::SyntheticOptions opt;
    opt.n_images = 8;
    opt.voxel_count = 6;
    app.add_option("--out", out, "output directory");
    app.add_option("--images", opt.n_images, "image count")->check(CLI::PositiveNumber);
    app.add_option("--grid", opt.patch_h, "patch grid side")->check(CLI::Range(2, 64));
    app.add_option("--voxels", opt.voxel_count, "brain voxels")->check(CLI::PositiveNumber);
    app.add_option("--seed", opt.seed, "generator seed");
    CLI11_PARSE(app, argc, argv);
    opt.patch_w = opt.patch_h;

    try {
        alignedcut::cli::write_fixture(out, opt);
        std::cout << "wrote " << out.string() << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
