#include "capsdet/eval.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "capsdet/errors.hpp"

namespace capsdet {

namespace {

std::string num(double v) {
    char b[40];
    std::snprintf(b, sizeof(b), "%g", v);
    return b;
}

std::string fixed6(double v) {
    char b[40];
    std::snprintf(b, sizeof(b), "%.6f", v);
    return b;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write " + path);
}

void push_u32be(std::string& s, uint32_t v) {
    s.push_back(static_cast<char>((v >> 24) & 0xff));
    s.push_back(static_cast<char>((v >> 16) & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
    s.push_back(static_cast<char>(v & 0xff));
}

void push_chunk(std::string& png, const char type[5], const std::string& data) {
    push_u32be(png, static_cast<uint32_t>(data.size()));
    png.append(type, 4);
    png.append(data);
    uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(type), 4);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data()),
                static_cast<uInt>(data.size()));
    push_u32be(png, static_cast<uint32_t>(crc));
}

}  // namespace

EvalMetrics evaluate_patch(const Model& model, const DetectorState& detector, const Tensor& patch,
                           const Tensor& images, const std::vector<int>& labels,
                           const AttackConfig& attack, const EvalConfig& cfg) {
    const Shape& is = images.shape();
    if (is.size() != 4) throw ShapeError("evaluate_patch: images must be [N,h,w,c]");
    if (static_cast<size_t>(is[0]) != labels.size())
        throw ContractError("evaluate_patch: one label per image");
    if (patch.rank() != 3 || patch.shape()[2] != is[3])
        throw ShapeError("evaluate_patch: patch must be [ph,pw,c] with matching channels");
    if (cfg.repeats < 1 || cfg.batch_size < 1)
        throw ContractError("evaluate_patch: repeats and batch_size must be positive");

    int n = is[0];
    int h = is[1];
    int w = is[2];
    int ch = is[3];
    std::vector<int> kept;
    for (int i = 0; i < n; ++i) {
        if (labels[static_cast<size_t>(i)] < 0) throw ContractError("evaluate_patch: negative label");
        if (labels[static_cast<size_t>(i)] != attack.c_adv) kept.push_back(i);
    }
    if (kept.empty())
        throw ContractError("evaluate_patch: no images left after excluding the target class");

    Rng stream = Rng::from_seed(cfg.seed).split("eval-transforms");
    struct Trial {
        int img;
        TransformSample t;
    };
    std::vector<Trial> trials;
    trials.reserve(kept.size() * static_cast<size_t>(cfg.repeats));
    for (int i : kept)
        for (int r = 0; r < cfg.repeats; ++r)
            trials.push_back({i, sample_transform(stream, attack, w, cfg.area_fraction)});

    int64_t block = static_cast<int64_t>(h) * w * ch;
    int64_t fooled = 0;
    int64_t detected = 0;
    int64_t evaded = 0;  // fooled and not detected
    for (size_t off = 0; off < trials.size(); off += static_cast<size_t>(cfg.batch_size)) {
        size_t bsz = std::min(static_cast<size_t>(cfg.batch_size), trials.size() - off);
        Tensor raw({static_cast<int>(bsz), h, w, ch});
        std::vector<TransformSample> ts(bsz);
        for (size_t j = 0; j < bsz; ++j) {
            const Trial& tr = trials[off + j];
            std::memcpy(raw.data() + static_cast<int64_t>(j) * block,
                        images.data() + static_cast<int64_t>(tr.img) * block,
                        static_cast<size_t>(block) * sizeof(double));
            ts[j] = tr.t;
        }
        Tensor patched = stencil_affine_tensor(
            patch, *build_batch_apply_plan(patch.shape()[0], patch.shape()[1], raw, ts));

        Tape tape;
        BoundParams bp(tape, model.params, false);
        Var xp = tape.input(patched);
        ModelForward fwd = model_forward(tape, xp, bp, model, false, Rng::from_seed(0));
        const Tensor& scores = tape.value(fwd.scores);
        std::vector<int> preds = predicted_classes(scores);
        Var emb = select_embedding(fwd.embeddings, scores, SelectMode::Predicted);
        Var delta = reconstruction_delta(decode(emb, bp, model.spec.decoder), xp);
        const Tensor& dv = tape.value(delta);

        for (size_t j = 0; j < bsz; ++j) {
            bool fool = preds[j] == attack.c_adv;
            int det = detect(dv[static_cast<int64_t>(j)], detector.alpha_crit);
            fooled += fool ? 1 : 0;
            detected += det;
            evaded += (fool && det == 0) ? 1 : 0;
        }
    }

    int64_t tn = static_cast<int64_t>(trials.size());
    if (evaded > fooled || evaded + detected > tn)
        throw ContractError("evaluate_patch: conjunction bound violated");

    EvalMetrics m;
    m.adr = static_cast<double>(detected) / tn;
    m.afr = static_cast<double>(fooled) / tn;
    m.asr = static_cast<double>(evaded) / tn;
    m.n_evaluated = static_cast<int>(kept.size());
    m.lambda_a = attack.lambda_a;
    m.scale = cfg.area_fraction;
    return m;
}

std::vector<double> default_lambda_grid() {
    return {0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 10.0, 100.0, 1000.0, 10000.0};
}

std::vector<SweepRow> lambda_grid_sweep(const Model& model, const DetectorState& detector,
                                        const Tensor& train_images, const Tensor& eval_images,
                                        const std::vector<int>& eval_labels,
                                        const std::vector<double>& grid,
                                        const AttackConfig& attack, const EvalConfig& cfg) {
    if (grid.empty()) throw ContractError("lambda_grid_sweep: empty grid");
    if (std::find(grid.begin(), grid.end(), 0.0) == grid.end())
        throw ContractError("lambda_grid_sweep: grid must include the naive row (lambda 0)");

    std::vector<SweepRow> rows;
    rows.reserve(grid.size());
    for (double la : grid) {
        AttackConfig a = attack;
        a.lambda_a = la;
        PatchTrainResult tr = train_patch(model, train_images, a);
        SweepRow row;
        row.lambda_a = la;
        row.patch = patch_pixels_tensor(tr.patch.theta);
        row.metrics = evaluate_patch(model, detector, row.patch, eval_images, eval_labels, a, cfg);
        rows.push_back(std::move(row));
    }
    int best = -1;
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].lambda_a <= 0.0) continue;
        if (best < 0 || rows[i].metrics.asr > rows[static_cast<size_t>(best)].metrics.asr)
            best = static_cast<int>(i);
    }
    if (best >= 0) rows[static_cast<size_t>(best)].best_adaptive = true;
    return rows;
}

std::vector<SweepRow> lambda_grid_sweep(const Model& model, const DetectorState& detector,
                                        const Tensor& images, const std::vector<int>& labels,
                                        const std::vector<double>& grid,
                                        const AttackConfig& attack, const EvalConfig& cfg) {
    return lambda_grid_sweep(model, detector, images, images, labels, grid, attack, cfg);
}

std::vector<EvalMetrics> scale_sweep(const Model& model, const DetectorState& detector,
                                     const Tensor& patch, const Tensor& images,
                                     const std::vector<int>& labels,
                                     const std::vector<double>& scales,
                                     const AttackConfig& attack, const EvalConfig& cfg) {
    if (scales.empty()) throw ContractError("scale_sweep: empty scale list");
    std::vector<EvalMetrics> out;
    out.reserve(scales.size());
    for (double s : scales) {
        if (s <= 0.0 || s > 1.0) throw ContractError("scale_sweep: scales must lie in (0,1]");
        EvalConfig c2 = cfg;
        c2.area_fraction = s;
        out.push_back(evaluate_patch(model, detector, patch, images, labels, attack, c2));
    }
    return out;
}

void write_png(const Tensor& image, const std::string& path) {
    const Shape& s = image.shape();
    if (s.size() != 3 || (s[2] != 1 && s[2] != 3))
        throw ContractError("write_png: image must be [h,w,1] or [h,w,3]");
    int h = s[0];
    int w = s[1];
    int ch = s[2];

    std::string raw;
    raw.reserve(static_cast<size_t>(h) * (static_cast<size_t>(w) * ch + 1));
    for (int y = 0; y < h; ++y) {
        raw.push_back('\0');  // filter type none
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                double v = image[(static_cast<int64_t>(y) * w + x) * ch + c];
                int byte = static_cast<int>(std::lround(v * 255.0));
                raw.push_back(static_cast<char>(std::clamp(byte, 0, 255)));
            }
    }
    uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
    std::string zdata(zlen, '\0');
    if (compress2(reinterpret_cast<Bytef*>(zdata.data()), &zlen,
                  reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                  9) != Z_OK)
        throw IoError("write_png: deflate failed");
    zdata.resize(zlen);

    std::string ihdr;
    push_u32be(ihdr, static_cast<uint32_t>(w));
    push_u32be(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);                        // bit depth
    ihdr.push_back(ch == 1 ? '\0' : '\x02');  // grayscale / truecolor
    ihdr.push_back('\0');                     // compression
    ihdr.push_back('\0');                     // filter
    ihdr.push_back('\0');                     // interlace

    std::string png("\x89PNG\r\n\x1a\n", 8);
    push_chunk(png, "IHDR", ihdr);
    push_chunk(png, "IDAT", zdata);
    push_chunk(png, "IEND", "");
    write_file(path, png);
}

void emit_report(const std::vector<ReportCell>& cells, const std::string& out_dir) {
    if (cells.empty()) throw ContractError("emit_report: no cells");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("emit_report: cannot create " + out_dir + ": " + ec.message());

    std::string csv = "model,dataset,lambda_a,scale,adr,afr,asr,n,seed\n";
    for (const ReportCell& c : cells) {
        csv += c.model + "," + c.dataset + "," + num(c.metrics.lambda_a) + "," +
               num(c.metrics.scale) + "," + fixed6(c.metrics.adr) + "," + fixed6(c.metrics.afr) +
               "," + fixed6(c.metrics.asr) + "," + std::to_string(c.metrics.n_evaluated) + "," +
               std::to_string(static_cast<unsigned long long>(c.seed)) + "\n";
    }
    write_file(out_dir + "/metrics.csv", csv);

    // one panel per model/dataset pair, cells in the order given
    std::vector<std::string> keys;
    std::vector<std::vector<size_t>> groups;
    for (size_t i = 0; i < cells.size(); ++i) {
        std::string key = cells[i].model + " / " + cells[i].dataset;
        size_t g = 0;
        for (; g < keys.size(); ++g)
            if (keys[g] == key) break;
        if (g == keys.size()) {
            keys.push_back(key);
            groups.emplace_back();
        }
        groups[g].push_back(i);
    }

    const int width = 640;
    const int panel = 230;
    const int x0 = 60;
    const int pw = 500;
    const int ph = 140;
    int height = panel * static_cast<int>(groups.size()) + 20;

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      std::to_string(width) + "\" height=\"" + std::to_string(height) +
                      "\" font-family=\"monospace\" font-size=\"11\">\n";
    const char* colors[3] = {"#1f77b4", "#d62728", "#2ca02c"};
    const char* names[3] = {"ADR", "AFR", "ASR"};
    for (size_t g = 0; g < groups.size(); ++g) {
        int top = 20 + panel * static_cast<int>(g);
        int y0 = top + 25;
        svg += "<text x=\"" + std::to_string(x0) + "\" y=\"" + std::to_string(top + 12) +
               "\">" + keys[g] + "</text>\n";
        svg += "<rect x=\"" + std::to_string(x0) + "\" y=\"" + std::to_string(y0) + "\" width=\"" +
               std::to_string(pw) + "\" height=\"" + std::to_string(ph) +
               "\" fill=\"none\" stroke=\"#999\"/>\n";
        for (int tick = 0; tick <= 2; ++tick) {
            double v = tick * 0.5;
            int y = y0 + static_cast<int>(std::lround((1.0 - v) * ph));
            svg += "<text x=\"" + std::to_string(x0 - 35) + "\" y=\"" + std::to_string(y + 4) +
                   "\">" + num(v) + "</text>\n";
        }
        size_t gn = groups[g].size();
        for (int series = 0; series < 3; ++series) {
            std::string pts;
            for (size_t k = 0; k < gn; ++k) {
                const EvalMetrics& m = cells[groups[g][k]].metrics;
                double v = series == 0 ? m.adr : (series == 1 ? m.afr : m.asr);
                double px = gn == 1 ? x0 + pw / 2.0
                                    : x0 + static_cast<double>(k) * pw / (static_cast<double>(gn) - 1.0);
                double py = y0 + (1.0 - v) * ph;
                char b[64];
                std::snprintf(b, sizeof(b), "%.2f,%.2f ", px, py);
                pts += b;
                std::snprintf(b, sizeof(b), "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\"", px, py);
                svg += std::string(b) + " fill=\"" + colors[series] + "\"/>\n";
            }
            if (gn > 1)
                svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" +
                       colors[series] + "\"/>\n";
            svg += "<text x=\"" + std::to_string(x0 + pw + 8) + "\" y=\"" +
                   std::to_string(y0 + 14 + 16 * series) + "\" fill=\"" + colors[series] + "\">" +
                   names[series] + "</text>\n";
        }
        for (size_t k = 0; k < gn; ++k) {
            const EvalMetrics& m = cells[groups[g][k]].metrics;
            double px = gn == 1 ? x0 + pw / 2.0
                                : x0 + static_cast<double>(k) * pw / (static_cast<double>(gn) - 1.0);
            char b[96];
            std::snprintf(b, sizeof(b), "<text x=\"%.2f\" y=\"%d\" text-anchor=\"middle\">", px,
                          y0 + ph + 16);
            svg += std::string(b) + "l" + num(m.lambda_a) + " s" + num(m.scale) + "</text>\n";
        }
    }
    svg += "</svg>\n";
    write_file(out_dir + "/sweep.svg", svg);

    for (size_t i = 0; i < cells.size(); ++i) {
        if (cells[i].patch.size() <= 1) continue;
        char name[64];
        std::snprintf(name, sizeof(name), "patch_%03zu.png", i);
        write_png(cells[i].patch, out_dir + "/" + name);
    }
}

}  // namespace capsdet
