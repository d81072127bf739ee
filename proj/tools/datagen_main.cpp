#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "capsdet/data.hpp"
#include "capsdet/errors.hpp"

using namespace capsdet;

int main(int argc, char** argv) {
    CLI::App app{"emit a synthetic stroke-digit dataset as a CAPSDAT1 container"};
    std::string out;
    int n = 2048;
    int side = 28;
    int classes = 10;
    uint64_t seed = 0;
    app.add_option("--out", out, "container output path")->required();
    app.add_option("--n", n, "sample count");
    app.add_option("--side", side, "image side in pixels");
    app.add_option("--classes", classes, "class count (2-10)");
    app.add_option("--seed", seed, "generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        Dataset ds = make_stroke_digits(n, side, classes, seed);
        save_u8_container(ds, out);
        std::printf("wrote %d images (%dx%d, %d classes) to %s\n", ds.size(), side, side,
                    classes, out.c_str());
        return 0;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
