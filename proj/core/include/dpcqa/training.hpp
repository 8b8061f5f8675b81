#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dpcqa/adam.hpp"
#include "dpcqa/checkpoint.hpp"
#include "dpcqa/image_io.hpp"
#include "dpcqa/losses.hpp"
#include "dpcqa/synth.hpp"

namespace dpcqa {

struct TrainConfig {
    uint64_t seed = 0;
    int64_t batch_size = 16;
    int64_t max_epochs = 100;
    int64_t patience = 10;
    double lr = 1e-4;
    double weight_decay = 1e-5;
    double lambda1 = 0.5, lambda2 = 0.1, lambda3 = 0.5;
    double lambda_sub = 0.25;  // auxiliary sub-score supervision
    bool use_l_diff = true, use_l_wavelet = true, use_l_aggr = true;
    std::string resume_from;  // optional checkpoint to start from
    ModelConfig model;

    void validate() const {
        model.validate();
        if (batch_size < 1) throw ShapeError("train config: batch_size must be >= 1");
        if (use_l_diff && batch_size < 2)
            throw ShapeError("train config: batch_size must be >= 2 when the difference loss is on");
        if (max_epochs < 1 || patience < 1)
            throw ShapeError("train config: epochs and patience must be >= 1");
        if (lr <= 0) throw ShapeError("train config: lr must be positive");
        if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda_sub < 0)
            throw ShapeError("train config: loss weights must be >= 0");
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["seed"] = seed;
        j["batch_size"] = batch_size;
        j["max_epochs"] = max_epochs;
        j["patience"] = patience;
        j["lr"] = lr;
        j["weight_decay"] = weight_decay;
        j["lambda1"] = lambda1;
        j["lambda2"] = lambda2;
        j["lambda3"] = lambda3;
        j["lambda_sub"] = lambda_sub;
        j["use_l_diff"] = use_l_diff;
        j["use_l_wavelet"] = use_l_wavelet;
        j["use_l_aggr"] = use_l_aggr;
        if (!resume_from.empty()) j["resume_from"] = resume_from;
        nlohmann::ordered_json mj = model.to_json();
        for (auto& [k, v] : mj.items()) j[k] = v;
        return j;
    }

    static TrainConfig from_json(const nlohmann::ordered_json& j) {
        TrainConfig c;
        c.seed = j.value("seed", c.seed);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.patience = j.value("patience", c.patience);
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.lambda1 = j.value("lambda1", c.lambda1);
        c.lambda2 = j.value("lambda2", c.lambda2);
        c.lambda3 = j.value("lambda3", c.lambda3);
        c.lambda_sub = j.value("lambda_sub", c.lambda_sub);
        c.use_l_diff = j.value("use_l_diff", c.use_l_diff);
        c.use_l_wavelet = j.value("use_l_wavelet", c.use_l_wavelet);
        c.use_l_aggr = j.value("use_l_aggr", c.use_l_aggr);
        c.resume_from = j.value("resume_from", c.resume_from);
        c.model = ModelConfig::from_json(j);
        c.validate();
        return c;
    }
};

struct TrainSample {
    std::string id;
    TensorPtr<float> image;
    MaskPair masks;
    double s_star = 1.0;
    bool nuc_artefact = false, mem_artefact = false, stain_artefact = false;
};

struct Dataset {
    std::vector<TrainSample> train, val, test;

    std::vector<TrainSample>& split(const std::string& name) {
        if (name == "train") return train;
        if (name == "val") return val;
        if (name == "test") return test;
        throw IoError("unknown split: " + name);
    }
};

inline TrainSample sample_from_patch(const SynthPatch& p) {
    TrainSample s;
    s.id = p.patch_id;
    s.image = p.image;
    s.masks = p.masks;
    s.s_star = p.s_star;
    for (const auto& l : p.artefact_labels) {
        if (l == "nucleus") s.nuc_artefact = true;
        if (l == "membrane") s.mem_artefact = true;
        if (l == "staining") s.stain_artefact = true;
    }
    return s;
}

inline Dataset dataset_from_items(const std::vector<SynthItem>& items) {
    Dataset d;
    for (const auto& it : items) d.split(it.split).push_back(sample_from_patch(it.patch));
    return d;
}

// dataset directory layout: {id}.ppm, {id}.mask.pgm, manifest.csv
inline Dataset load_dataset(const std::string& dir, int64_t dilation_radius) {
    std::ifstream in(dir + "/manifest.csv");
    if (!in) throw IoError("cannot open manifest: " + dir + "/manifest.csv");
    Dataset d;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1) {
            if (line != "id,split,s_star,labels,n_cells")
                throw IoError("manifest header unrecognized at line 1");
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() != 5)
            throw IoError("manifest line " + std::to_string(lineno) + ": expected 5 columns");

        TrainSample s;
        s.id = cols[0];
        try {
            s.s_star = std::stod(cols[2]);
        } catch (const std::exception&) {
            throw IoError("manifest line " + std::to_string(lineno) + ": bad s_star");
        }
        std::stringstream ls(cols[3]);
        std::string lab;
        while (std::getline(ls, lab, ';')) {
            if (lab == "nucleus") s.nuc_artefact = true;
            else if (lab == "membrane") s.mem_artefact = true;
            else if (lab == "staining") s.stain_artefact = true;
            else if (!lab.empty())
                throw IoError("manifest line " + std::to_string(lineno) + ": unknown label " + lab);
        }
        s.image = load_ppm(dir + "/" + s.id + ".ppm");
        GrayImage m = load_pgm(dir + "/" + s.id + ".mask.pgm");
        if (m.h != s.image->shape[1] || m.w != s.image->shape[2])
            throw IoError("mask size mismatch for patch " + s.id);
        s.masks = make_mask_pair(m.v, m.h, m.w, dilation_radius);

        if (cols[1] == "train") d.train.push_back(std::move(s));
        else if (cols[1] == "val") d.val.push_back(std::move(s));
        else if (cols[1] == "test") d.test.push_back(std::move(s));
        else throw IoError("manifest line " + std::to_string(lineno) + ": unknown split");
    }
    return d;
}

struct EpochStats {
    int64_t epoch = 0;
    double train_loss = 0, val_loss = 0;
    LossBreakdown terms;
};

struct TrainResult {
    ModelParams<float> params;  // best-validation weights
    std::vector<EpochStats> history;
    int64_t best_epoch = 0;
    double best_val = 0;
    std::string log_csv;
};

namespace train_detail {

inline std::vector<std::vector<float>> snapshot(ModelParams<float>& p) {
    std::vector<std::vector<float>> out;
    for (auto& t : param_list(p)) out.push_back(t->data);
    return out;
}

inline void restore(ModelParams<float>& p, const std::vector<std::vector<float>>& snap) {
    auto list = param_list(p);
    for (size_t i = 0; i < list.size(); ++i) list[i]->data = snap[i];
}

inline double validate_l1(const std::vector<TrainSample>& samples, ModelParams<float>& params,
                          const ModelConfig& cfg) {
    if (samples.empty()) throw ShapeError("training needs a nonempty validation split");
    double acc = 0;
    for (const auto& s : samples) {
        Tape<float> tape;
        auto art = model_forward(tape, s.image, s.masks, params, cfg);
        acc += std::abs(static_cast<double>(art.s_stain->data[0]) - s.s_star);
    }
    return acc / static_cast<double>(samples.size());
}

}  // namespace train_detail

// Deterministic training: one root seed drives shuffling, pairing, and
// permutation streams, so identical seeds give identical logs and final
// weights. A non-finite loss or gradient aborts with the batch context.
inline TrainResult train_model(const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.train.empty()) throw ShapeError("train_model: empty training split");

    ModelParams<float> params = init_params<float>(cfg.model, cfg.seed);
    if (!cfg.resume_from.empty()) {
        auto loaded = load_checkpoint<float>(cfg.resume_from);
        auto slots = param_slots(params);
        for (auto& [name, slot] : slots) {
            const auto& t = loaded.find(name);
            if (t->shape != slot->shape)
                throw IoError("resume checkpoint tensor " + name + " has wrong shape");
            slot->data = t->data;
        }
    }
    std::vector<TensorPtr<float>> plist = param_list(params);
    AdamState<float> adam;
    adam.init(plist);
    AdamConfig<float> acfg;
    acfg.lr = static_cast<float>(cfg.lr);
    acfg.weight_decay = static_cast<float>(cfg.weight_decay);

    TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<float>> best_snap;
    int64_t best_epoch = -1, stale = 0;

    std::vector<int64_t> order(data.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);

    for (int64_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng shuffle_rng(sub_seed(cfg.seed, "epoch.shuffle", static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0;
        LossBreakdown epoch_terms;
        int64_t seen = 0, batch_index = 0;

        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            size_t bs = end - start;
            ++batch_index;
            uint64_t batch_tag =
                static_cast<uint64_t>(epoch) * 100000 + static_cast<uint64_t>(batch_index);

            Tape<float> tape;
            std::vector<TensorPtr<float>> scores;
            std::vector<double> targets;
            std::vector<TensorPtr<float>> wav_terms, aggr_terms, sub_terms;
            for (size_t bi = start; bi < end; ++bi) {
                const TrainSample& s = data.train[static_cast<size_t>(order[bi])];
                auto art = model_forward(tape, s.image, s.masks, params, cfg.model);
                scores.push_back(art.s_stain);
                targets.push_back(s.s_star);
                if (cfg.use_l_wavelet) {
                    auto recon = conv2d(tape, art.stage1, params.recon.w, params.recon.b);
                    wav_terms.push_back(loss_wavelet(tape, s.image, recon));
                }
                if (cfg.use_l_aggr)
                    aggr_terms.push_back(loss_aggr(tape, art.cells, params, cfg.model,
                                                   sub_seed(cfg.seed, "aggr.perm",
                                                            batch_tag * 64 + (bi - start))));
                if (cfg.lambda_sub > 0) {
                    auto tn = scalar_tensor<float>(s.nuc_artefact ? 0.f : 1.f);
                    auto tm = scalar_tensor<float>(s.mem_artefact ? 0.f : 1.f);
                    auto term = add(tape, abs_val(tape, sub(tape, art.s_nuc, tn)),
                                    abs_val(tape, sub(tape, art.s_mem, tm)));
                    sub_terms.push_back(scale(tape, term, 0.5f));
                }
            }

            LossBreakdown terms;
            auto total = loss_reg(tape, scores, targets);
            terms.reg = total->data[0];
            if (cfg.use_l_diff && bs >= 2) {
                auto ld = loss_diff(tape, scores, targets, sub_seed(cfg.seed, "pair", batch_tag));
                terms.diff = ld->data[0];
                total = add(tape, total, scale(tape, ld, static_cast<float>(cfg.lambda1)));
            }
            if (!wav_terms.empty()) {
                auto lw = scale(tape, add_all(tape, wav_terms),
                                1.f / static_cast<float>(wav_terms.size()));
                terms.wavelet = lw->data[0];
                total = add(tape, total, scale(tape, lw, static_cast<float>(cfg.lambda2)));
            }
            if (!aggr_terms.empty()) {
                auto la = scale(tape, add_all(tape, aggr_terms),
                                1.f / static_cast<float>(aggr_terms.size()));
                terms.aggr = la->data[0];
                total = add(tape, total, scale(tape, la, static_cast<float>(cfg.lambda3)));
            }
            if (!sub_terms.empty()) {
                auto ls = scale(tape, add_all(tape, sub_terms),
                                1.f / static_cast<float>(sub_terms.size()));
                terms.sub = ls->data[0];
                total = add(tape, total, scale(tape, ls, static_cast<float>(cfg.lambda_sub)));
            }
            terms.total = total->data[0];

            auto describe = [&](const char* what) {
                char buf[256];
                std::snprintf(buf, sizeof(buf),
                              "%s at epoch %lld batch %lld (reg=%.6g diff=%.6g wavelet=%.6g "
                              "aggr=%.6g sub=%.6g)",
                              what, static_cast<long long>(epoch),
                              static_cast<long long>(batch_index), terms.reg, terms.diff,
                              terms.wavelet, terms.aggr, terms.sub);
                return std::string(buf);
            };
            if (!std::isfinite(terms.total))
                throw NumericalError(describe("non-finite training loss"));

            tape.backward(total);
            try {
                adam_step(adam, plist, acfg);
            } catch (const NumericalError&) {
                throw NumericalError(describe("non-finite gradient"));
            }
            for (auto& t : plist) t->zero_grad();

            epoch_loss += terms.total * static_cast<double>(bs);
            epoch_terms.reg += terms.reg * static_cast<double>(bs);
            epoch_terms.diff += terms.diff * static_cast<double>(bs);
            epoch_terms.wavelet += terms.wavelet * static_cast<double>(bs);
            epoch_terms.aggr += terms.aggr * static_cast<double>(bs);
            epoch_terms.sub += terms.sub * static_cast<double>(bs);
            seen += static_cast<int64_t>(bs);
        }

        EpochStats st;
        st.epoch = epoch;
        st.train_loss = epoch_loss / static_cast<double>(seen);
        st.terms.reg = epoch_terms.reg / static_cast<double>(seen);
        st.terms.diff = epoch_terms.diff / static_cast<double>(seen);
        st.terms.wavelet = epoch_terms.wavelet / static_cast<double>(seen);
        st.terms.aggr = epoch_terms.aggr / static_cast<double>(seen);
        st.terms.sub = epoch_terms.sub / static_cast<double>(seen);
        st.val_loss = train_detail::validate_l1(data.val, params, cfg.model);
        result.history.push_back(st);

        if (st.val_loss < best_val) {
            best_val = st.val_loss;
            best_epoch = epoch;
            best_snap = train_detail::snapshot(params);
            stale = 0;
        } else if (++stale >= cfg.patience) {
            break;
        }
    }

    if (best_epoch < 0) throw NumericalError("train_model: no epoch completed");
    result.params = std::move(params);
    train_detail::restore(result.params, best_snap);
    result.best_epoch = best_epoch;
    result.best_val = best_val;

    std::string log = "epoch,train_loss,val_loss,l_reg,l_diff,l_wavelet,l_aggr,l_sub\n";
    char buf[256];
    for (const auto& st : result.history) {
        std::snprintf(buf, sizeof(buf), "%lld,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f\n",
                      static_cast<long long>(st.epoch), st.train_loss, st.val_loss, st.terms.reg,
                      st.terms.diff, st.terms.wavelet, st.terms.aggr, st.terms.sub);
        log += buf;
    }
    result.log_csv = log;
    return result;
}

// model checkpoint helpers: weights plus the embedded model config
inline void save_model(const std::string& path, ModelParams<float>& params,
                       const nlohmann::ordered_json& config) {
    NamedTensors<float> tensors;
    for (auto& [name, slot] : param_slots(params)) tensors.emplace_back(name, slot);
    save_checkpoint(path, config, tensors);
}

struct LoadedModel {
    ModelConfig config;
    nlohmann::ordered_json raw_config;
    ModelParams<float> params;
};

inline LoadedModel load_model(const std::string& path) {
    auto ck = load_checkpoint<float>(path);
    LoadedModel m;
    m.raw_config = ck.config;
    m.config = ModelConfig::from_json(ck.config);
    m.params = make_params<float>(m.config);
    for (auto& [name, slot] : param_slots(m.params)) {
        const auto& t = ck.find(name);
        if (t->shape != slot->shape)
            throw IoError("checkpoint tensor " + name + " has unexpected shape");
        slot->data = t->data;
    }
    return m;
}

}  // namespace dpcqa
