#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "advst/checkpoint.hpp"
#include "advst/data.hpp"
#include "advst/errors.hpp"
#include "advst/losses.hpp"
#include "advst/model.hpp"
#include "advst/trainer.hpp"
#include "advst/transforms.hpp"

using namespace advst;

namespace {

std::string temp_path(const std::string& stem) {
    return std::string(std::getenv("TMPDIR") ? std::getenv("TMPDIR") : "/tmp") +
           "/" + stem;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
}

bool same_values(const Tensor<float>& a, const Tensor<float>& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), a.numel() * sizeof(float)) == 0;
}

bool same_params(const ModelParams<float>& a, const ModelParams<float>& b) {
    auto pa = const_cast<ModelParams<float>&>(a).all();
    auto pb = const_cast<ModelParams<float>&>(b).all();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (!same_values(*pa[i], *pb[i])) return false;
    return true;
}

Dataset named_domain(std::size_t per_class, std::uint64_t seed, const char* name) {
    Rng r(seed);
    Dataset d = synth_digits(per_class, r);
    d.name = name;
    return d;
}

ModelParams<double> widen(const ModelParams<float>& m) {
    auto copy = [](const Tensor<float>& t) {
        std::vector<double> v(t.values().begin(), t.values().end());
        return Tensor<double>::from_values(t.shape(), std::move(v));
    };
    ModelParams<double> d;
    d.conv1_w = copy(m.conv1_w);
    d.conv1_b = copy(m.conv1_b);
    d.conv2_w = copy(m.conv2_w);
    d.conv2_b = copy(m.conv2_b);
    d.fc1_w = copy(m.fc1_w);
    d.fc1_b = copy(m.fc1_b);
    d.fc2_w = copy(m.fc2_w);
    d.fc2_b = copy(m.fc2_b);
    d.cls_w = copy(m.cls_w);
    d.cls_b = copy(m.cls_b);
    d.proj_w = copy(m.proj_w);
    d.proj_b = copy(m.proj_b);
    return d;
}

Tensor<double> widen(const Tensor<float>& t) {
    std::vector<double> v(t.values().begin(), t.values().end());
    return Tensor<double>::from_values(t.shape(), std::move(v));
}

}  // namespace

TEST_CASE("domain pool ring buffer and totals") {
    DomainPool pool;
    pool.source = named_domain(2, 1, "src");  // 20 samples
    pool.k = 2;
    CHECK(pool.total_samples() == 20);

    pool.add(named_domain(1, 2, "g1"));
    pool.add(named_domain(1, 3, "g2"));
    CHECK(pool.generated.size() == 2);
    CHECK(pool.total_samples() == 40);

    pool.add(named_domain(1, 4, "g3"));  // evicts the oldest
    REQUIRE(pool.generated.size() == 2);
    CHECK(pool.generated[0].name == "g2");
    CHECK(pool.generated[1].name == "g3");

    DomainPool none;
    none.source = pool.source;
    none.k = 0;
    none.add(named_domain(1, 5, "gx"));
    CHECK(none.generated.empty());
    CHECK(none.total_samples() == 20);
}

TEST_CASE("learning rate schedules") {
    TrainConfig cfg;
    cfg.alpha = 0.3;
    cfg.epochs = 10;

    cfg.lr_schedule = LrSchedule::Step;
    CHECK(learning_rate(cfg, 0) == doctest::Approx(0.3));
    CHECK(learning_rate(cfg, 24) == doctest::Approx(0.3));
    CHECK(learning_rate(cfg, 25) == doctest::Approx(0.03));
    CHECK(learning_rate(cfg, 40) == doctest::Approx(0.03));

    cfg.lr_schedule = LrSchedule::Cosine;
    CHECK(learning_rate(cfg, 0) == doctest::Approx(0.3));
    CHECK(learning_rate(cfg, 5) == doctest::Approx(0.15));
    for (std::size_t e = 1; e < cfg.epochs; ++e)
        CHECK(learning_rate(cfg, e) < learning_rate(cfg, e - 1));
}

TEST_CASE("generate_domain with zero steps reproduces the initial transforms") {
    Dataset src = named_domain(3, 11, "src");  // 30 samples
    Rng mr(12);
    ModelParams<float> model = init_model<float>(10, mr);
    ChainDistribution dist{3};

    TrainConfig cfg;
    cfg.t_max = 0;
    cfg.batch = 8;
    cfg.lambda = 100;
    cfg.beta = 0.2;

    Rng gen_rng(77);
    GenStats gs;
    Dataset gen = generate_domain(model, src, dist, cfg, gen_rng, &gs);

    REQUIRE(gen.size() == src.size());
    CHECK(gen.labels == src.labels);
    CHECK(gen.classes == src.classes);

    // Replay the exact parameter draws: one chain + init per sample in source
    // order, applied without any ascent.
    Rng replay(77);
    for (std::size_t i = 0; i < src.size(); ++i) {
        TransformChain chain = sample_chain(dist, replay);
        TransformParams<float> params = init_params<float>(chain, replay);
        Tensor<float> img = images_at(src, {i});
        Tensor<float> want = apply_chain(chain, params, img);
        Tensor<float> got = images_at(gen, {i});
        CHECK(same_values(want, got));
    }
    CHECK(gs.warnings == 0);
    CHECK(gs.sample_obj_start == gs.sample_obj_end);
}

TEST_CASE("generated domains conserve labels and stay in range") {
    Dataset src = named_domain(2, 21, "src");
    Rng mr(22);
    ModelParams<float> model = init_model<float>(10, mr);

    TrainConfig cfg;
    cfg.t_max = 2;
    cfg.batch = 8;
    cfg.lambda = 100;
    cfg.beta = 0.2;

    Rng g(5);
    Dataset gen = generate_domain(model, src, ChainDistribution{3}, cfg, g);
    CHECK(gen.labels == src.labels);
    float lo = 1.0f, hi = 0.0f;
    for (const float v : gen.images.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo >= 0.0f);
    CHECK(hi <= 1.0f);
}

TEST_CASE("generation is deterministic and leaves the model untouched") {
    Dataset src = named_domain(2, 31, "src");
    Rng mr(32);
    ModelParams<float> model = init_model<float>(10, mr);
    ModelParams<float> before = init_model<float>(10, (mr = Rng(32), mr));
    REQUIRE(same_params(model, before));

    TrainConfig cfg;
    cfg.t_max = 3;
    cfg.batch = 8;
    cfg.lambda = 100;
    cfg.beta = 0.2;

    Rng g1(9), g2(9);
    Dataset a = generate_domain(model, src, ChainDistribution{3}, cfg, g1);
    Dataset b = generate_domain(model, src, ChainDistribution{3}, cfg, g2);
    CHECK(same_values(a.images, b.images));
    CHECK(same_params(model, before));
}

TEST_CASE("ascent improves the batch objective") {
    // Whole suite as one maximization batch; the mean objective must rise and
    // most samples must end at or above their start. Chains made purely of
    // parameterless ops cannot move, so ties count as held ground.
    Rng r1(21), mr(22);
    Dataset src = synth_digits(26, r1);
    std::vector<std::size_t> first;
    for (std::size_t i = 0; i < 256; ++i) first.push_back(i);
    src.images = images_at(src, first);
    src.labels.resize(256);

    ModelParams<float> model = init_model<float>(10, mr);
    TrainConfig cfg;
    cfg.batch = 256;
    cfg.t_max = 5;
    cfg.beta = 0.2;
    cfg.lambda = 100;
    cfg.epsilon = 0;

    Rng g(100);
    GenStats gs;
    generate_domain(model, src, ChainDistribution{3}, cfg, g, &gs);
    CHECK(gs.obj_end > gs.obj_start);
    std::size_t held = 0;
    for (std::size_t i = 0; i < 256; ++i)
        if (gs.sample_obj_end[i] >= gs.sample_obj_start[i]) ++held;
    CHECK(held >= 205);  // >= 80%
    CHECK(gs.warnings == 0);
}

TEST_CASE("pixel baseline stays closer to the source in feature space") {
    Rng r1(41), mr(42);
    Dataset src = synth_digits(4, r1);
    ModelParams<float> model = init_model<float>(10, mr);

    TrainConfig cfg;
    cfg.batch = 32;
    cfg.t_max = 5;
    cfg.beta = 0.2;
    cfg.lambda = 1.0;

    SUBCASE("zero steps is the identity") {
        TrainConfig z = cfg;
        z.t_max = 0;
        Rng g(600);
        Dataset gen = generate_domain_pixel(model, src, z, g);
        CHECK(same_values(gen.images, src.images));
        CHECK(gen.labels == src.labels);
    }

    SUBCASE("same budget, smaller feature shift than semantics transforms") {
        Rng g1(600), g2(600);
        GenStats sem, pix;
        generate_domain(model, src, ChainDistribution{3}, cfg, g1, &sem);
        generate_domain_pixel(model, src, cfg, g2, &pix);
        CHECK(pix.mean_feat_dist < sem.mean_feat_dist);
        CHECK(pix.obj_end >= pix.obj_start);
    }
}

TEST_CASE("lambda controls the feature-distance penalty") {
    Rng r1(51), mr(52);
    Dataset src = synth_digits(2, r1);  // 20 samples, one ascent batch
    ModelParams<float> model = init_model<float>(10, mr);

    // Per-sample step beta/batch must stay small against lambda's curvature
    // or the penalty itself oscillates; this matches the training-scale ratio.
    TrainConfig cfg;
    cfg.batch = 20;
    cfg.t_max = 20;
    cfg.beta = 0.0156;
    cfg.early_stop_delta = 0.0;  // run the full budget so the penalty can act

    auto dist_at = [&](double lambda) {
        TrainConfig c = cfg;
        c.lambda = lambda;
        Rng g(500);
        GenStats gs;
        generate_domain(model, src, ChainDistribution{3}, c, g, &gs);
        return gs.mean_feat_dist;
    };
    CHECK(dist_at(100.0) < dist_at(0.0));
}

TEST_CASE("minimize_epoch contracts: no-op, descent, divergence") {
    Dataset src = named_domain(4, 61, "src");  // 40 samples
    Rng mr(62);
    ModelParams<float> model = init_model<float>(10, mr);

    DomainPool pool;
    pool.source = src;
    pool.k = 0;

    SUBCASE("zero batches leaves parameters untouched") {
        ModelParams<float> before = model;
        TrainConfig cfg;
        cfg.batches_per_epoch = 0;
        Rng r(9);
        minimize_epoch(model, pool, cfg, 0, r);
        CHECK(same_params(model, before));
    }

    SUBCASE("one small step lowers the loss on the very batch it used") {
        TrainConfig cfg;
        cfg.batch = 32;
        cfg.batches_per_epoch = 1;
        cfg.alpha = 1e-4;
        cfg.eta = 0.0;

        // Duplicate the stream to learn which samples the step will draw.
        Rng r(9), probe = r;
        std::vector<std::size_t> idx(cfg.batch);
        for (auto& i : idx) i = probe.uniform_int(src.size());
        Tensor<float> xb = images_at(src, idx);
        std::vector<std::size_t> yb = labels_at(src, idx);

        auto batch_loss = [&](const ModelParams<float>& m) {
            ModelParams<double> md = widen(m);
            ForwardOutput<double> fo = forward(md, widen(xb));
            LossBreakdown<double> lb = minimization_loss(fo.logits, yb, fo.u, 0.0);
            return lb.total.values()[0];
        };
        const double before = batch_loss(model);
        minimize_epoch(model, pool, cfg, 0, r);
        const double after = batch_loss(model);
        CHECK(after < before);
    }

    SUBCASE("a poisoned parameter raises a divergence error") {
        // The classifier bias reaches the loss unfiltered; hidden-layer NaNs
        // can be absorbed by relu's comparison.
        model.cls_b.data()[0] = std::numeric_limits<float>::quiet_NaN();
        TrainConfig cfg;
        cfg.batch = 8;
        cfg.batches_per_epoch = 1;
        Rng r(9);
        CHECK_THROWS_AS(minimize_epoch(model, pool, cfg, 0, r), DivergenceError);
        try {
            Rng r2(9);
            minimize_epoch(model, pool, cfg, 0, r2);
        } catch (const DivergenceError& e) {
            CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
        }
    }

    SUBCASE("evaluating an empty dataset is a contract violation") {
        Dataset empty;
        CHECK_THROWS_AS((void)evaluate(model, empty), ContractError);
    }
}

TEST_CASE("train with zero epochs returns the seeded initial model") {
    Dataset src = named_domain(2, 71, "src");
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 123;

    TrainResult res = train(cfg, src, {});
    CHECK(res.log.epochs.empty());

    Rng master(123);
    Rng init_rng = master.fork(1);
    ModelParams<float> want = init_model<float>(src.classes, init_rng);
    CHECK(same_params(res.model, want));
}

TEST_CASE("training is bit-deterministic per seed") {
    Dataset src = named_domain(4, 81, "src");  // 40 samples
    Dataset held = named_domain(1, 82, "held");

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 16;
    cfg.t_max = 2;
    cfg.lambda = 100;
    cfg.beta = 0.2;
    cfg.alpha = 0.01;
    cfg.eta = 10;
    cfg.pool_k = 1;
    cfg.seed = 5;
    cfg.log_timing = false;

    TrainResult a = train(cfg, src, {held});
    TrainResult b = train(cfg, src, {held});
    CHECK(same_params(a.model, b.model));
    CHECK(train_log_csv(a.log) == train_log_csv(b.log));

    const std::string pa = temp_path("advst_det_a.ckpt");
    const std::string pb = temp_path("advst_det_b.ckpt");
    save_checkpoint(pa, a.model);
    save_checkpoint(pb, b.model);
    CHECK(slurp(pa) == slurp(pb));
    std::remove(pa.c_str());
    std::remove(pb.c_str());

    // The log carries one record per epoch with sane accuracy values.
    REQUIRE(a.log.epochs.size() == 2);
    for (const EpochStats& e : a.log.epochs) {
        REQUIRE(e.domain_acc.size() == 1);
        CHECK(e.domain_acc[0] >= 0.0);
        CHECK(e.domain_acc[0] <= 1.0);
        CHECK(e.seconds == 0.0);
        CHECK(std::isfinite(e.max_obj_start));
        CHECK(std::isfinite(e.max_obj_end));
        CHECK(e.mean_feat_dist >= 0.0);
    }
}

TEST_CASE("train_erm equals the degenerate train configuration") {
    Dataset src = named_domain(3, 91, "src");

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 10;
    cfg.alpha = 0.01;
    cfg.seed = 17;
    cfg.log_timing = false;

    TrainResult erm = train_erm(cfg, src, {});

    TrainConfig manual = cfg;
    manual.t_max = 0;
    manual.pool_k = 0;
    manual.eta = 0;
    manual.use_contrastive = false;
    TrainResult deg = train(manual, src, {}, GenKind::None);

    CHECK(same_params(erm.model, deg.model));
    CHECK(train_log_csv(erm.log) == train_log_csv(deg.log));
}

TEST_CASE("train log CSV format") {
    TrainLog log;
    log.domains = {"held", "shifted"};
    EpochStats e;
    e.epoch = 1;
    e.ce = 0.5;
    e.contrastive = 0.25;
    e.entropy = 1.5;
    e.max_obj_start = -2;
    e.max_obj_end = -1;
    e.mean_feat_dist = 0.125;
    e.domain_acc = {0.5, 1};
    e.seconds = 0;
    log.epochs.push_back(e);

    const std::string want =
        "epoch,ce,contrastive,entropy,max_obj_start,max_obj_end,"
        "mean_feat_dist,acc_held,acc_shifted,seconds\n"
        "1,0.5,0.25,1.5,-2,-1,0.125,0.5,1,0\n";
    CHECK(train_log_csv(log) == want);

    const std::string path = temp_path("advst_log.csv");
    write_train_log(path, log);
    CHECK(slurp(path) == want);
    std::remove(path.c_str());

    EpochStats ragged = e;
    ragged.epoch = 2;
    ragged.domain_acc = {0.5};
    log.epochs.push_back(ragged);
    CHECK_THROWS_AS((void)train_log_csv(log), ContractError);
}

TEST_CASE("a small model learns synthetic digits") {
    Rng r1(11), r2(12);
    Dataset tr = synth_digits(100, r1);  // 1000 samples
    Dataset held = synth_digits(20, r2);
    held.name = "held";

    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch = 32;
    cfg.alpha = 0.1;
    cfg.seed = 7;
    cfg.log_timing = false;

    TrainResult res = train_erm(cfg, tr, {held});
    CHECK(res.log.epochs.back().domain_acc[0] > 0.85);
}
