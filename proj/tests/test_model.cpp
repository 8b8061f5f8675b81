#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "dpcqa/checkpoint.hpp"
#include "dpcqa/fusion.hpp"
#include "support/gradcheck.hpp"

using namespace dpcqa;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.stem_channels = 4;
    cfg.hidden_dim = 8;
    cfg.cell_dim = 4;
    cfg.mlp_hidden = 8;
    cfg.crop_size = 6;
    cfg.dilation_radius = 1;
    return cfg;
}

// two nuclei on an 8x8 grid; instance 2 sits below-right of instance 1
MaskPair tiny_masks() {
    std::vector<uint8_t> g(64, 0);
    for (int r = 1; r <= 2; ++r)
        for (int c = 1; c <= 2; ++c) g[static_cast<size_t>(r * 8 + c)] = 1;
    for (int r = 5; r <= 6; ++r)
        for (int c = 4; c <= 6; ++c) g[static_cast<size_t>(r * 8 + c)] = 2;
    return make_mask_pair(g, 8, 8, 1);
}

template <typename T>
TensorPtr<T> random_image(int64_t h, int64_t w, uint64_t seed) {
    Rng rng(seed);
    auto t = make_tensor<T>({3, h, w});
    for (auto& v : t->data) v = static_cast<T>(rng.uniform(0.0, 1.0));
    return t;
}

std::string temp_path(const std::string& name) {
    return "/tmp/dpcqa-test-" + name + "-" + std::to_string(::getpid());
}

}  // namespace

TEST_CASE("mask derivation keeps membrane disjoint from nuclei") {
    MaskPair mp = tiny_masks();
    CHECK(mp.n_instances == 2);
    for (size_t i = 0; i < mp.nuc.size(); ++i) {
        CHECK((mp.nuc[i] & mp.mem[i]) == 0);
        if (mp.labels[i]) CHECK(mp.nuc[i] == 1);
    }
    // the ring must contain at least the 4-neighbours of each nucleus block
    CHECK(mp.mem[0 * 8 + 1] == 1);
    CHECK(mp.mem[3 * 8 + 2] == 1);
    std::vector<uint8_t> bad(64, 0);
    bad[0] = 2;  // id 1 missing
    CHECK_THROWS_AS(make_mask_pair(bad, 8, 8, 1), ShapeError);
}

TEST_CASE("instances are ordered by centroid row then column") {
    std::vector<uint8_t> g(64, 0);
    g[1 * 8 + 6] = 2;  // higher row, but id 2
    g[5 * 8 + 1] = 1;
    MaskPair mp = make_mask_pair(g, 8, 8, 1);
    auto infos = instance_geometry(mp);
    REQUIRE(infos.size() == 2);
    CHECK(infos[0].id == 2);
    CHECK(infos[1].id == 1);
    CHECK(infos[0].cy == doctest::Approx(1.0));
    CHECK(infos[1].cx == doctest::Approx(1.0));
}

TEST_CASE("global stream produces a token per 2x2 cell of the half grid") {
    ModelConfig cfg = tiny_config();
    auto params = init_params<float>(cfg, 3);
    auto img = random_image<float>(8, 8, 21);
    Tape<float> tape;
    auto out = global_forward(tape, img, params, cfg);
    CHECK(out.grid_h == 4);
    CHECK(out.grid_w == 4);
    CHECK(out.f_global->shape == Shape{16, 8});
    CHECK(out.stage1->shape == Shape{4, 8, 8});
    CHECK(out.f_diff->shape == Shape{8, 4, 4});
    auto odd = random_image<float>(10, 8, 2);
    CHECK_THROWS_AS(global_forward(tape, odd, params, cfg), ShapeError);
}

TEST_CASE("cell encoders embed each instance in centroid order") {
    ModelConfig cfg = tiny_config();
    auto params = init_params<float>(cfg, 4);
    auto img = random_image<float>(8, 8, 22);
    Tape<float> tape;
    auto emb = encode_cells(tape, img, tiny_masks(), params, cfg);
    CHECK(emb.n_cells == 2);
    CHECK(emb.nucleus_tokens->shape == Shape{2, 4});
    CHECK(emb.membrane_tokens->shape == Shape{2, 4});

    auto pooled = aggr_rwkv(tape, emb, params, cfg);
    CHECK(pooled->shape == Shape{8});
}

TEST_CASE("empty patches fall back to the learned default cell vector") {
    ModelConfig cfg = tiny_config();
    auto params = init_params<float>(cfg, 5);
    auto img = random_image<float>(8, 8, 23);
    MaskPair empty = make_mask_pair(std::vector<uint8_t>(64, 0), 8, 8, 1);
    Tape<float> tape;
    auto emb = encode_cells(tape, img, empty, params, cfg);
    CHECK(emb.n_cells == 0);
    auto pooled = aggr_rwkv(tape, emb, params, cfg);
    CHECK(pooled->data == params.default_cell->data);

    auto art = model_forward(tape, img, empty, params, cfg);
    CHECK(art.s_stain->data[0] >= 0.f);
    CHECK(art.s_stain->data[0] <= 1.f);
}

TEST_CASE("attention weights form a distribution over global tokens") {
    ModelConfig cfg = tiny_config();
    auto params = init_params<float>(cfg, 6);
    auto img = random_image<float>(8, 8, 24);
    Tape<float> tape;
    auto art = model_forward(tape, img, tiny_masks(), params, cfg);
    REQUIRE(art.attention);
    CHECK(art.attention->numel() == 16);
    double s = 0;
    for (float v : art.attention->data) {
        CHECK(v >= 0.f);
        s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("gated fusion stays elementwise between its inputs") {
    ModelConfig cfg = tiny_config();
    auto params = init_params<float>(cfg, 7);
    Rng rng(71);
    Tape<float> tape;
    auto a = make_tensor<float>({8});
    auto b = make_tensor<float>({8});
    for (auto& v : a->data) v = static_cast<float>(rng.normal(0, 2));
    for (auto& v : b->data) v = static_cast<float>(rng.normal(0, 2));
    auto out = gated_fusion(tape, a, b, params);
    for (int i = 0; i < 8; ++i) {
        CHECK(out->data[i] >= std::min(a->data[i], b->data[i]) - 1e-6f);
        CHECK(out->data[i] <= std::max(a->data[i], b->data[i]) + 1e-6f);
    }
}

TEST_CASE("every emitted score lies in the unit interval") {
    ModelConfig cfg = tiny_config();
    for (uint64_t seed = 1; seed <= 8; ++seed) {
        auto params = init_params<float>(cfg, seed);
        auto img = random_image<float>(8, 8, seed + 100);
        Tape<float> tape;
        auto art = model_forward(tape, img, tiny_masks(), params, cfg);
        for (auto& s : {art.s_stain, art.s_nuc, art.s_mem}) {
            CHECK(s->numel() == 1);
            CHECK(s->data[0] >= 0.f);
            CHECK(s->data[0] <= 1.f);
        }
    }
}

TEST_CASE("ablation switches change the graph but keep the contract") {
    auto img = random_image<float>(8, 8, 31);
    MaskPair masks = tiny_masks();

    ModelConfig cfg = tiny_config();
    cfg.use_wcg = false;
    auto p1 = init_params<float>(cfg, 8);
    Tape<float> t1;
    auto a1 = model_forward(t1, img, masks, p1, cfg);
    CHECK(a1.s_stain->data[0] >= 0.f);

    cfg = tiny_config();
    cfg.use_aggr_rwkv = false;
    auto p2 = init_params<float>(cfg, 8);
    Tape<float> t2;
    auto a2 = model_forward(t2, img, masks, p2, cfg);
    CHECK(a2.s_stain->data[0] <= 1.f);

    cfg = tiny_config();
    cfg.use_cross_attention = false;
    auto p3 = init_params<float>(cfg, 8);
    Tape<float> t3;
    auto a3 = model_forward(t3, img, masks, p3, cfg);
    CHECK(!a3.attention);

    // same seed, same switches -> identical output
    cfg = tiny_config();
    auto p4 = init_params<float>(cfg, 8);
    auto p5 = init_params<float>(cfg, 8);
    Tape<float> t4, t5;
    auto a4 = model_forward(t4, img, masks, p4, cfg);
    auto a5 = model_forward(t5, img, masks, p5, cfg);
    CHECK(a4.s_stain->data[0] == a5.s_stain->data[0]);
}

TEST_CASE("parameter table is stable and fully named") {
    ModelConfig cfg = tiny_config();
    auto params = make_params<float>(cfg);
    auto slots = param_slots(params);
    auto list = param_list(params);
    CHECK(slots.size() == list.size());
    std::set<std::string> names;
    for (auto& [name, slot] : slots) {
        CHECK(slot != nullptr);
        CHECK(slot->requires_grad);
        names.insert(name);
    }
    CHECK(names.size() == slots.size());
    CHECK(names.count("global.stem.w") == 1);
    CHECK(names.count("fusion.gate_w") == 1);
}

TEST_CASE("init is seed-deterministic and seed-sensitive") {
    ModelConfig cfg = tiny_config();
    auto a = init_params<float>(cfg, 33);
    auto b = init_params<float>(cfg, 33);
    auto c = init_params<float>(cfg, 34);
    auto la = param_list(a), lb = param_list(b), lc = param_list(c);
    bool any_diff = false;
    for (size_t i = 0; i < la.size(); ++i) {
        CHECK(la[i]->data == lb[i]->data);
        if (la[i]->data != lc[i]->data) any_diff = true;
    }
    CHECK(any_diff);
    // decay starts positive so early steps cannot produce a negative w
    for (float v : a.mix.decay_raw->data) CHECK(v > 0.f);
}

TEST_CASE("checkpoints restore every tensor bit for bit") {
    ModelConfig cfg = tiny_config();
    auto params = init_params<float>(cfg, 12);
    std::string path = temp_path("ckpt.bin");

    NamedTensors<float> tensors;
    for (auto& [name, slot] : param_slots(params)) tensors.emplace_back(name, slot);
    nlohmann::ordered_json config = cfg.to_json();
    save_checkpoint(path, config, tensors);

    auto loaded = load_checkpoint<float>(path);
    CHECK(loaded.config == config);
    for (auto& [name, slot] : param_slots(params)) {
        const auto& t = loaded.find(name);
        CHECK(t->shape == slot->shape);
        CHECK(t->data == slot->data);
    }
    CHECK_THROWS_AS(loaded.find("no.such.tensor"), IoError);

    // saving twice produces identical bytes
    std::string path2 = temp_path("ckpt2.bin");
    save_checkpoint(path2, config, tensors);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
    std::remove(path2.c_str());

    // trailing garbage is rejected
    {
        std::ofstream app(path, std::ios::binary | std::ios::app);
        app << "x";
    }
    CHECK_THROWS_AS(load_checkpoint<float>(path), IoError);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint dtype must match the requested precision") {
    auto t = param_tensor<double>({2}, {1.0, 2.0});
    std::string path = temp_path("ckpt-dtype.bin");
    save_checkpoint<double>(path, nlohmann::ordered_json::object(), {{"t", t}});
    CHECK_THROWS_AS(load_checkpoint<float>(path), IoError);
    auto back = load_checkpoint<double>(path);
    CHECK(back.find("t")->data == t->data);
    std::remove(path.c_str());
}

TEST_CASE("model config json round trip keeps every field") {
    ModelConfig cfg = tiny_config();
    cfg.use_cross_attention = false;
    cfg.threshold = 0.37;
    auto j = cfg.to_json();
    ModelConfig back = ModelConfig::from_json(j);
    CHECK(back.stem_channels == cfg.stem_channels);
    CHECK(back.hidden_dim == cfg.hidden_dim);
    CHECK(back.cell_dim == cfg.cell_dim);
    CHECK(back.mlp_hidden == cfg.mlp_hidden);
    CHECK(back.crop_size == cfg.crop_size);
    CHECK(back.dilation_radius == cfg.dilation_radius);
    CHECK(back.threshold == cfg.threshold);
    CHECK(back.use_cross_attention == false);
    CHECK_THROWS_AS(ModelConfig::from_json({{"hidden_dim", 7}}), ShapeError);
}

TEST_CASE("whole model gradient smoke test in double precision") {
    ModelConfig cfg = tiny_config();
    auto params = init_params<double>(cfg, 9);
    // nudge every parameter off the symmetric init; zero biases would put
    // fully masked crop positions exactly on the relu kink, where central
    // differences disagree with any one-sided subgradient
    Rng jitter(123);
    for (auto& [name, slot] : param_slots(params))
        for (auto& v : slot->data) v += 0.01 + 0.05 * jitter.uniform();
    auto img = random_image<double>(8, 8, 77);
    MaskPair masks = tiny_masks();

    auto fwd = [&](Tape<double>& t) {
        auto art = model_forward(t, img, masks, params, cfg);
        auto s = add(t, art.s_stain, art.s_nuc);
        return add(t, s, art.s_mem);
    };
    std::vector<std::pair<std::string, TensorPtr<double>>> inputs;
    for (auto& [name, slot] : param_slots(params)) inputs.emplace_back(name, slot);
    auto res = gradcheck::check(fwd, inputs, 5, 6);
    INFO("worst ", res.worst);
    CHECK(res.max_rel_err < 1e-4);
}
