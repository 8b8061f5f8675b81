// dpcqa: synth / train / score / eval / analyze for the dual-stream
// patch quality model. All randomness flows from --seed through named
// sub-seed streams, so every run is reproducible from its resolved
// config. Exit codes: 0 ok, 2 usage, 3 numerical abort, 4 IO/parse.

#include <atomic>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "dpcqa/fusion.hpp"
#include "dpcqa/metrics.hpp"
#include "dpcqa/training.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw dpcqa::IoError("cannot write " + path.string());
    out << text;
    if (!out) throw dpcqa::IoError("short write to " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw dpcqa::IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ordered_json load_json_file(const std::string& path) {
    try {
        return ordered_json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw dpcqa::IoError("config " + path + ": " + e.what());
    }
}

void write_resolved_config(const std::string& out_dir, ordered_json j) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "resolved_config.json", j.dump(2) + "\n");
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (!line.empty() && line.back() == ',') cols.push_back("");
    return cols;
}

double parse_num(const std::string& s, const std::string& where) {
    try {
        size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw dpcqa::IoError(where + ": bad number '" + s + "'");
    }
}

int thread_budget() {
    const char* env = std::getenv("DPCQA_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    return n >= 1 ? n : 1;
}

// ---- synth ----------------------------------------------------------

struct SynthFlags {
    std::string out, config;
    int64_t n = 200;
    uint64_t seed = 0;
    bool n_set = false, seed_set = false;
};

int cmd_synth(const SynthFlags& f) {
    dpcqa::SynthConfig cfg;
    if (!f.config.empty()) {
        auto j = load_json_file(f.config);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.n = j.value("n", cfg.n);
        cfg.h = j.value("h", cfg.h);
        cfg.w = j.value("w", cfg.w);
        cfg.min_cells = j.value("min_cells", cfg.min_cells);
        cfg.max_cells = j.value("max_cells", cfg.max_cells);
        cfg.dilation_radius = j.value("dilation_radius", cfg.dilation_radius);
    }
    if (f.n_set) cfg.n = f.n;
    if (f.seed_set) cfg.seed = f.seed;
    if (cfg.n < 10) throw dpcqa::ShapeError("synth: --n must be at least 10");

    auto items = dpcqa::synth_dataset(cfg);
    fs::create_directories(f.out);
    for (const auto& it : items) {
        const auto& p = it.patch;
        dpcqa::save_ppm((fs::path(f.out) / (p.patch_id + ".ppm")).string(), *p.image);
        dpcqa::GrayImage m{p.masks.h, p.masks.w, p.masks.labels};
        dpcqa::save_pgm((fs::path(f.out) / (p.patch_id + ".mask.pgm")).string(), m);
    }
    fs::path manifest = fs::path(f.out) / "manifest.csv";
    write_text(manifest, dpcqa::manifest_csv(items));

    ordered_json rc;
    rc["subcommand"] = "synth";
    rc["out"] = f.out;
    rc["seed"] = cfg.seed;
    rc["n"] = cfg.n;
    rc["h"] = cfg.h;
    rc["w"] = cfg.w;
    rc["min_cells"] = cfg.min_cells;
    rc["max_cells"] = cfg.max_cells;
    rc["dilation_radius"] = cfg.dilation_radius;
    write_resolved_config(f.out, rc);

    std::vector<int64_t> hist(10, 0);
    for (const auto& it : items) {
        double sev = 1.0 - it.patch.s_star;
        auto b = static_cast<size_t>(std::min(9.0, std::max(0.0, sev * 10.0)));
        ++hist[b];
    }
    std::cout << "manifest: " << manifest.string() << "\n";
    std::cout << "severity histogram (1 - s_star, 10 bins):\n";
    for (size_t b = 0; b < hist.size(); ++b)
        std::cout << fmt("  [%.1f,%.1f%s %lld\n", 0.1 * b, 0.1 * (b + 1), b == 9 ? "]" : ")",
                         static_cast<long long>(hist[b]));
    return 0;
}

// ---- train ----------------------------------------------------------

struct TrainFlags {
    std::string data, out, config;
    uint64_t seed = 0;
    int64_t epochs = 0, batch = 0;
    double lr = 0;
    bool seed_set = false, epochs_set = false, batch_set = false, lr_set = false;
    bool no_wcg = false, no_aggr_rwkv = false, no_cross_attention = false;
    bool no_l_diff = false, no_l_wavelet = false, no_l_aggr = false;
};

dpcqa::TrainConfig resolve_train_config(const TrainFlags& f) {
    dpcqa::TrainConfig cfg;
    if (!f.config.empty()) cfg = dpcqa::TrainConfig::from_json(load_json_file(f.config));
    if (f.seed_set) cfg.seed = f.seed;
    if (f.epochs_set) cfg.max_epochs = f.epochs;
    if (f.batch_set) cfg.batch_size = f.batch;
    if (f.lr_set) cfg.lr = f.lr;
    if (f.no_wcg) cfg.model.use_wcg = false;
    if (f.no_aggr_rwkv) cfg.model.use_aggr_rwkv = false;
    if (f.no_cross_attention) cfg.model.use_cross_attention = false;
    if (f.no_l_diff) cfg.use_l_diff = false;
    if (f.no_l_wavelet) cfg.use_l_wavelet = false;
    if (f.no_l_aggr) cfg.use_l_aggr = false;
    cfg.validate();
    return cfg;
}

int cmd_train(const TrainFlags& f) {
    dpcqa::TrainConfig cfg = resolve_train_config(f);
    dpcqa::Dataset data = dpcqa::load_dataset(f.data, cfg.model.dilation_radius);
    if (data.val.empty())
        throw dpcqa::IoError("train: dataset has no validation split");

    ordered_json rc = cfg.to_json();
    rc["subcommand"] = "train";
    rc["data"] = f.data;
    rc["out"] = f.out;
    write_resolved_config(f.out, rc);

    dpcqa::TrainResult res = dpcqa::train_model(data, cfg);
    write_text(fs::path(f.out) / "train_log.csv", res.log_csv);
    dpcqa::save_model((fs::path(f.out) / "model.ckpt").string(), res.params, cfg.to_json());

    std::cout << fmt("trained %zu epochs, best val L1 %.9f at epoch %lld\n", res.history.size(),
                     res.best_val, static_cast<long long>(res.best_epoch));
    std::cout << "checkpoint: " << (fs::path(f.out) / "model.ckpt").string() << "\n";
    return 0;
}

// ---- score ----------------------------------------------------------

struct ScoreFlags {
    std::string checkpoint, input, out;
    bool heatmaps = false;
    double threshold = -1;  // <0 means "use checkpoint config"
};

int cmd_score(const ScoreFlags& f) {
    dpcqa::LoadedModel model = dpcqa::load_model(f.checkpoint);
    double threshold = f.threshold >= 0 ? f.threshold : model.config.threshold;

    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(f.input)) {
        if (!e.is_regular_file()) continue;
        auto p = e.path();
        if (p.extension() == ".ppm") ids.push_back(p.stem().string());
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw dpcqa::IoError("score: no .ppm images in " + f.input);
    fs::create_directories(f.out);

    struct Row {
        dpcqa::QualityReport report;
        std::string skip_reason;
        bool skipped = false;
    };
    std::vector<Row> rows(ids.size());
    std::atomic<size_t> next{0};
    std::atomic<bool> numerical_abort{false};
    std::string abort_msg;
    std::mutex abort_mu;

    auto worker = [&]() {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= ids.size() || numerical_abort.load()) return;
            const std::string& id = ids[i];
            try {
                auto image = dpcqa::load_ppm((fs::path(f.input) / (id + ".ppm")).string());
                dpcqa::MaskPair masks;
                fs::path mask_path = fs::path(f.input) / (id + ".mask.pgm");
                if (fs::exists(mask_path)) {
                    dpcqa::GrayImage m = dpcqa::load_pgm(mask_path.string());
                    if (m.h != image->shape[1] || m.w != image->shape[2])
                        throw dpcqa::IoError("mask size mismatch");
                    masks = dpcqa::make_mask_pair(m.v, m.h, m.w, model.config.dilation_radius);
                } else {
                    std::vector<uint8_t> empty(
                        static_cast<size_t>(image->shape[1] * image->shape[2]), 0);
                    masks = dpcqa::make_mask_pair(empty, image->shape[1], image->shape[2],
                                                  model.config.dilation_radius);
                }
                dpcqa::Tape<float> tape;
                auto art = dpcqa::model_forward(tape, image, masks, model.params, model.config);
                rows[i].report = dpcqa::make_report(id, art, threshold);
                if (f.heatmaps && art.attention) {
                    auto plane = dpcqa::make_tensor<float>({art.grid_h, art.grid_w});
                    float peak = 0;
                    for (float v : art.attention->data) peak = std::max(peak, v);
                    for (size_t k = 0; k < plane->data.size(); ++k)
                        plane->data[k] = peak > 0 ? art.attention->data[k] / peak : 0.f;
                    dpcqa::save_pgm_float((fs::path(f.out) / (id + ".attn.pgm")).string(),
                                          *plane);
                }
            } catch (const dpcqa::NumericalError& e) {
                std::lock_guard<std::mutex> lk(abort_mu);
                numerical_abort.store(true);
                abort_msg = std::string("score: patch ") + id + ": " + e.what();
                return;
            } catch (const std::exception& e) {
                rows[i].skipped = true;
                rows[i].skip_reason = e.what();
            }
        }
    };

    int n_threads = std::min<int>(thread_budget(), static_cast<int>(ids.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (numerical_abort.load()) throw dpcqa::NumericalError(abort_msg);

    std::string csv = "patch_id,s_stain,s_nuc,s_mem,usable\n";
    std::vector<double> stains, nucs, mems;
    int64_t skipped = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (rows[i].skipped) {
            ++skipped;
            std::cerr << "warning: skipped " << ids[i] << ": " << rows[i].skip_reason << "\n";
            continue;
        }
        const auto& r = rows[i].report;
        csv += fmt("%s,%.9f,%.9f,%.9f,%d\n", r.patch_id.c_str(), r.s_stain, r.s_nuc, r.s_mem,
                   r.usable ? 1 : 0);
        stains.push_back(r.s_stain);
        nucs.push_back(r.s_nuc);
        mems.push_back(r.s_mem);
    }
    if (stains.empty()) throw dpcqa::IoError("score: every image failed to score");
    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    // summary row: slide score is the mean patch score; last column counts skips
    csv += fmt("slide,%.9f,%.9f,%.9f,%lld\n", dpcqa::slide_score(stains), mean(nucs), mean(mems),
               static_cast<long long>(skipped));
    write_text(fs::path(f.out) / "scores.csv", csv);

    ordered_json rc;
    rc["subcommand"] = "score";
    rc["checkpoint"] = f.checkpoint;
    rc["input"] = f.input;
    rc["out"] = f.out;
    rc["threshold"] = threshold;
    rc["heatmaps"] = f.heatmaps;
    write_resolved_config(f.out, rc);

    std::cout << fmt("scored %zu patches, skipped %lld\n", stains.size(),
                     static_cast<long long>(skipped));
    std::cout << "scores: " << (fs::path(f.out) / "scores.csv").string() << "\n";
    return 0;
}

// ---- eval -----------------------------------------------------------

struct EvalFlags {
    std::string scores, manifest, out;
    double threshold = 0.5;
};

int cmd_eval(const EvalFlags& f) {
    struct Pred {
        double s_stain, s_nuc, s_mem;
    };
    std::map<std::string, Pred> preds;
    {
        std::ifstream in(f.scores);
        if (!in) throw dpcqa::IoError("cannot open scores: " + f.scores);
        std::string line;
        int64_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (lineno == 1) {
                if (line != "patch_id,s_stain,s_nuc,s_mem,usable")
                    throw dpcqa::IoError("scores header unrecognized at line 1");
                continue;
            }
            if (line.empty()) continue;
            auto cols = split_csv_line(line);
            if (cols.size() != 5)
                throw dpcqa::IoError(fmt("scores line %lld: expected 5 columns",
                                         static_cast<long long>(lineno)));
            if (cols[0] == "slide") continue;  // summary row
            std::string where = fmt("scores line %lld", static_cast<long long>(lineno));
            preds[cols[0]] = {parse_num(cols[1], where), parse_num(cols[2], where),
                              parse_num(cols[3], where)};
        }
    }

    struct Truth {
        double s_star;
        bool stain, nuc, mem;
    };
    std::vector<std::pair<std::string, Truth>> truths;
    {
        std::ifstream in(f.manifest);
        if (!in) throw dpcqa::IoError("cannot open manifest: " + f.manifest);
        std::string line;
        int64_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (lineno == 1) continue;  // header
            if (line.empty()) continue;
            auto cols = split_csv_line(line);
            if (cols.size() != 5)
                throw dpcqa::IoError(fmt("manifest line %lld: expected 5 columns",
                                         static_cast<long long>(lineno)));
            Truth t{};
            t.s_star = parse_num(cols[2], fmt("manifest line %lld",
                                              static_cast<long long>(lineno)));
            t.stain = cols[3].find("staining") != std::string::npos;
            t.nuc = cols[3].find("nucleus") != std::string::npos;
            t.mem = cols[3].find("membrane") != std::string::npos;
            truths.emplace_back(cols[0], t);
        }
    }

    std::vector<double> pred, target;
    int64_t n = 0, ok_stain = 0, ok_nuc = 0, ok_mem = 0;
    for (const auto& [id, t] : truths) {
        auto it = preds.find(id);
        if (it == preds.end()) continue;
        ++n;
        pred.push_back(it->second.s_stain);
        target.push_back(t.s_star);
        // a sub-score below threshold flags the corresponding artefact
        if ((it->second.s_stain < f.threshold) == t.stain) ++ok_stain;
        if ((it->second.s_nuc < f.threshold) == t.nuc) ++ok_nuc;
        if ((it->second.s_mem < f.threshold) == t.mem) ++ok_mem;
    }
    if (n < 3) throw dpcqa::IoError("eval: join produced fewer than 3 pairs");

    double plcc = dpcqa::plcc(pred, target);
    double srcc = dpcqa::srcc(pred, target);
    std::string report;
    report += fmt("n %lld\n", static_cast<long long>(n));
    report += fmt("plcc %.6f\n", plcc);
    report += fmt("srcc %.6f\n", srcc);
    report += fmt("acc_staining %.6f (%lld/%lld)\n",
                  static_cast<double>(ok_stain) / static_cast<double>(n),
                  static_cast<long long>(ok_stain), static_cast<long long>(n));
    report += fmt("acc_nucleus %.6f (%lld/%lld)\n",
                  static_cast<double>(ok_nuc) / static_cast<double>(n),
                  static_cast<long long>(ok_nuc), static_cast<long long>(n));
    report += fmt("acc_membrane %.6f (%lld/%lld)\n",
                  static_cast<double>(ok_mem) / static_cast<double>(n),
                  static_cast<long long>(ok_mem), static_cast<long long>(n));
    fs::create_directories(f.out);
    write_text(fs::path(f.out) / "eval_report.txt", report);
    std::cout << report;

    ordered_json rc;
    rc["subcommand"] = "eval";
    rc["scores"] = f.scores;
    rc["manifest"] = f.manifest;
    rc["out"] = f.out;
    rc["threshold"] = f.threshold;
    write_resolved_config(f.out, rc);
    return 0;
}

// ---- analyze --------------------------------------------------------

struct AnalyzeFlags {
    std::string pairs, out;
};

int cmd_analyze(const AnalyzeFlags& f) {
    std::ifstream in(f.pairs);
    if (!in) throw dpcqa::IoError("cannot open pairs csv: " + f.pairs);
    std::vector<std::string> metric_order;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1) {
            if (line != "patch_id,score,metric_name,metric_value")
                throw dpcqa::IoError("pairs csv header unrecognized at line 1");
            continue;
        }
        if (line.empty()) continue;
        auto cols = split_csv_line(line);
        if (cols.size() != 4)
            throw dpcqa::IoError(fmt("pairs csv line %lld: expected 4 columns",
                                     static_cast<long long>(lineno)));
        std::string where = fmt("pairs csv line %lld", static_cast<long long>(lineno));
        double score = parse_num(cols[1], where);
        double value = parse_num(cols[3], where);
        auto it = groups.find(cols[2]);
        if (it == groups.end()) {
            metric_order.push_back(cols[2]);
            it = groups.emplace(cols[2], std::make_pair(std::vector<double>{},
                                                        std::vector<double>{})).first;
        }
        it->second.first.push_back(score);
        it->second.second.push_back(value);
    }
    if (metric_order.empty()) throw dpcqa::IoError("pairs csv has no data rows");

    std::string csv =
        "metric,n,rho,rho_p,kw_h,kw_p,"
        "g1_count,g1_median,g2_count,g2_median,g3_count,g3_median,g4_count,g4_median,"
        "warnings\n";
    std::string text;
    for (const auto& name : metric_order) {
        const auto& [scores, values] = groups[name];
        dpcqa::BinReport rep = dpcqa::bin_group_analysis(scores, values);
        std::string warn;
        for (const auto& w : rep.warnings) {
            if (!warn.empty()) warn += ';';
            warn += w;
        }
        csv += fmt("%s,%zu,%.6f,%.6g,%.6f,%.6g", name.c_str(), scores.size(), rep.rho, rep.rho_p,
                   rep.kw_h, rep.kw_p);
        for (const auto& b : rep.bins) {
            csv += fmt(",%lld,", static_cast<long long>(b.count));
            csv += b.count > 0 ? fmt("%.6f", b.median) : "";
        }
        csv += "," + warn + "\n";

        text += fmt("metric %s (n=%zu)\n", name.c_str(), scores.size());
        text += fmt("  spearman rho %.6f (p %.6g)\n", rep.rho, rep.rho_p);
        text += fmt("  kruskal-wallis H %.6f (p %.6g)\n", rep.kw_h, rep.kw_p);
        for (size_t b = 0; b < rep.bins.size(); ++b) {
            const auto& bin = rep.bins[b];
            text += fmt("  G%zu [%.1f,%.1f%s n=%lld", b + 1, bin.lo, bin.hi,
                        b + 1 == rep.bins.size() ? "]" : ")", static_cast<long long>(bin.count));
            if (bin.count > 0) text += fmt(" median=%.6f", bin.median);
            text += "\n";
        }
        for (const auto& w : rep.warnings) text += "  warning: " + w + "\n";
    }
    fs::create_directories(f.out);
    write_text(fs::path(f.out) / "analyze_report.csv", csv);
    std::cout << text;

    ordered_json rc;
    rc["subcommand"] = "analyze";
    rc["pairs"] = f.pairs;
    rc["out"] = f.out;
    write_resolved_config(f.out, rc);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-stream pathology patch quality assessment"};
    app.require_subcommand(1);

    SynthFlags sf;
    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
    synth->add_option("--out", sf.out, "output directory")->required();
    synth->add_option("--n", sf.n, "number of patches");
    synth->add_option("--seed", sf.seed, "random seed");
    synth->add_option("--config", sf.config, "JSON config file");

    TrainFlags tf;
    auto* train = app.add_subcommand("train", "train a model on a synth dataset");
    train->add_option("data", tf.data, "dataset directory (with manifest.csv)")->required();
    train->add_option("--out", tf.out, "output directory")->required();
    train->add_option("--config", tf.config, "JSON config file");
    train->add_option("--seed", tf.seed, "random seed");
    train->add_option("--epochs", tf.epochs, "max epochs");
    train->add_option("--batch", tf.batch, "batch size");
    train->add_option("--lr", tf.lr, "learning rate");
    train->add_flag("--no-wcg", tf.no_wcg, "replace wavelet conv groups with plain convs");
    train->add_flag("--no-aggr-rwkv", tf.no_aggr_rwkv, "mean-pool cells instead of recurrence");
    train->add_flag("--no-cross-attention", tf.no_cross_attention,
                    "mean-pool global tokens instead of cross attention");
    train->add_flag("--no-l-diff", tf.no_l_diff, "disable the pairwise difference loss");
    train->add_flag("--no-l-wavelet", tf.no_l_wavelet, "disable the wavelet loss");
    train->add_flag("--no-l-aggr", tf.no_l_aggr, "disable the permutation consistency loss");

    ScoreFlags cf;
    auto* score = app.add_subcommand("score", "score every .ppm patch in a directory");
    score->add_option("checkpoint", cf.checkpoint, "model checkpoint")->required();
    score->add_option("input", cf.input, "directory of .ppm patches")->required();
    score->add_option("--out", cf.out, "output directory")->required();
    score->add_option("--threshold", cf.threshold, "usability threshold override");
    score->add_flag("--heatmaps", cf.heatmaps, "write per-patch attention heatmaps");

    EvalFlags ef;
    auto* eval = app.add_subcommand("eval", "correlate scores with dataset targets");
    eval->add_option("scores", ef.scores, "scores.csv from `score`")->required();
    eval->add_option("manifest", ef.manifest, "manifest.csv from `synth`")->required();
    eval->add_option("--out", ef.out, "output directory")->required();
    eval->add_option("--threshold", ef.threshold, "artefact detection threshold");

    AnalyzeFlags af;
    auto* analyze = app.add_subcommand("analyze", "bin scores against a downstream metric");
    analyze->add_option("pairs", af.pairs, "csv: patch_id,score,metric_name,metric_value")
        ->required();
    analyze->add_option("--out", af.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    sf.n_set = synth->count("--n") > 0;
    sf.seed_set = synth->count("--seed") > 0;
    tf.seed_set = train->count("--seed") > 0;
    tf.epochs_set = train->count("--epochs") > 0;
    tf.batch_set = train->count("--batch") > 0;
    tf.lr_set = train->count("--lr") > 0;

    try {
        if (synth->parsed()) return cmd_synth(sf);
        if (train->parsed()) return cmd_train(tf);
        if (score->parsed()) return cmd_score(cf);
        if (eval->parsed()) return cmd_eval(ef);
        if (analyze->parsed()) return cmd_analyze(af);
        std::cerr << "error: no subcommand\n";
        return 2;
    } catch (const dpcqa::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const dpcqa::ShapeError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
