#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <vector>

#include "advst/gradcheck_suites.hpp"
#include "advst/transforms.hpp"

using advst::apply_base;
using advst::apply_chain;
using advst::base_op_info;
using advst::BaseOpKind;
using advst::chain_probability;
using advst::ChainDistribution;
using advst::clamp_params;
using advst::ContractError;
using advst::FrozenAttrs;
using advst::init_params;
using advst::kNumBaseOps;
using advst::Rng;
using advst::sample_chain;
using advst::Tensor;
using advst::TransformChain;
using advst::TransformParams;

using Tn = Tensor<double>;

namespace {

Tn random_image(std::size_t bt, std::size_t h, std::size_t w, std::uint64_t seed,
                double lo = 0.0, double hi = 1.0) {
    Tn x = Tn::zeros({bt, 3, h, w});
    Rng rng(seed);
    for (auto& v : x.values()) v = rng.uniform(lo, hi);
    return x;
}

double max_abs_diff(const Tn& a, const Tn& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    return m;
}

Tn params1(double v) { return Tn::from_values({1}, {v}); }

// Every length 1..3 ordered duplicate-free chain, for exhaustive sweeps.
std::vector<TransformChain> all_chains_up_to_3() {
    std::vector<TransformChain> out;
    for (int a = 0; a < kNumBaseOps; ++a) {
        out.push_back({{BaseOpKind(a)}});
        for (int b = 0; b < kNumBaseOps; ++b) {
            if (b == a) continue;
            out.push_back({{BaseOpKind(a), BaseOpKind(b)}});
            for (int c = 0; c < kNumBaseOps; ++c) {
                if (c == a || c == b) continue;
                out.push_back({{BaseOpKind(a), BaseOpKind(b), BaseOpKind(c)}});
            }
        }
    }
    return out;
}

}  // namespace

TEST_CASE("base op table matches the augmentation inventory") {
    const std::map<BaseOpKind, int> counts = {
        {BaseOpKind::HSV, 3},       {BaseOpKind::Contrast, 1},  {BaseOpKind::Invert, 1},
        {BaseOpKind::Sharpness, 1}, {BaseOpKind::Shear, 2},     {BaseOpKind::Translate, 2},
        {BaseOpKind::Rotate, 1},    {BaseOpKind::Scale, 1},     {BaseOpKind::Solarize, 1},
        {BaseOpKind::Equalize, 0},  {BaseOpKind::Posterize, 0}, {BaseOpKind::Cutout, 0},
    };
    int total = 0;
    for (const auto& [kind, n] : counts) {
        const auto& info = base_op_info(kind);
        CHECK(info.param_count == n);
        CHECK(info.learnable == (n > 0));
        ++total;
    }
    CHECK(total == kNumBaseOps);
    CHECK_FALSE(base_op_info(BaseOpKind::Equalize).differentiable);
    CHECK_FALSE(base_op_info(BaseOpKind::Posterize).differentiable);
    CHECK_FALSE(base_op_info(BaseOpKind::Cutout).differentiable);
    CHECK(base_op_info(BaseOpKind::HSV).differentiable);
    for (const auto& [kind, n] : counts) {
        const auto& info = base_op_info(kind);
        for (int j = 0; j < n; ++j) {
            CHECK(info.lo[j] < info.hi[j]);
            CHECK(info.neutral[j] >= info.lo[j]);
            CHECK(info.neutral[j] <= info.hi[j]);
        }
    }
}

TEST_CASE("chain probabilities follow 1/(M_L * L_max)") {
    ChainDistribution dist;  // l_max = 3
    CHECK(dist.chain_count(1) == 12);
    CHECK(dist.chain_count(2) == 132);
    CHECK(dist.chain_count(3) == 1320);
    CHECK(dist.total_chains() == 1464);

    TransformChain c1{{BaseOpKind::Rotate}};
    CHECK(chain_probability(c1, dist) == doctest::Approx(1.0 / 36.0).epsilon(1e-12));
    TransformChain c3{{BaseOpKind::Rotate, BaseOpKind::HSV, BaseOpKind::Cutout}};
    CHECK(chain_probability(c3, dist) == doctest::Approx(1.0 / 3960.0).epsilon(1e-12));

    double total = 0;
    const auto chains = all_chains_up_to_3();
    CHECK(chains.size() == 1464);
    for (const auto& c : chains) total += chain_probability(c, dist);
    CHECK(std::abs(total - 1.0) <= 1e-12);

    TransformChain dup{{BaseOpKind::Rotate, BaseOpKind::Rotate}};
    CHECK_THROWS_AS(chain_probability(dup, dist), ContractError);
    TransformChain toolong{
        {BaseOpKind::Rotate, BaseOpKind::HSV, BaseOpKind::Cutout, BaseOpKind::Scale}};
    CHECK_THROWS_AS(chain_probability(toolong, dist), ContractError);
}

TEST_CASE("sampled chains are valid and uniform per the distribution") {
    ChainDistribution dist;
    Rng rng(20240817);
    const int draws = 100000;
    int len_counts[4] = {};
    std::map<std::vector<int>, int> chain2_counts;
    std::map<std::vector<int>, int> chain_counts;
    for (int d = 0; d < draws; ++d) {
        TransformChain c = sample_chain(dist, rng);
        REQUIRE(c.length() >= 1);
        REQUIRE(c.length() <= 3);
        bool seen[kNumBaseOps] = {};
        std::vector<int> key;
        for (auto k : c.ops) {
            REQUIRE_FALSE(seen[int(k)]);
            seen[int(k)] = true;
            key.push_back(int(k));
        }
        ++len_counts[c.length()];
        if (c.length() == 2) ++chain2_counts[key];
        ++chain_counts[key];
    }

    // Uniform length choice: 3 binomial standard deviations around 1/3.
    const double p_len = 1.0 / 3.0;
    const double sd_len = std::sqrt(draws * p_len * (1 - p_len));
    for (int l = 1; l <= 3; ++l)
        CHECK(std::abs(len_counts[l] - draws * p_len) <= 3 * sd_len);

    // Each specific length-2 chain: 3 sigma around 1/(3*132).
    const double p2 = 1.0 / 396.0;
    const double sd2 = std::sqrt(draws * p2 * (1 - p2));
    for (const auto& [key, cnt] : chain2_counts)
        CHECK(std::abs(cnt - draws * p2) <= 3 * sd2);

    // Chi-square over all 1464 chains; 1591.7 is the 99th percentile for
    // 1463 degrees of freedom, so passing means p > 0.01.
    double chi2 = 0;
    const auto chains = all_chains_up_to_3();
    for (const auto& c : chains) {
        std::vector<int> key;
        for (auto k : c.ops) key.push_back(int(k));
        const double expected = draws * chain_probability(c, dist);
        const auto it = chain_counts.find(key);
        const double observed = it == chain_counts.end() ? 0.0 : it->second;
        chi2 += (observed - expected) * (observed - expected) / expected;
    }
    CHECK(chi2 < 1591.7);

    ChainDistribution single{1};
    Rng rng1(7);
    for (int d = 0; d < 1000; ++d) CHECK(sample_chain(single, rng1).length() == 1);
}

TEST_CASE("init_params stays near neutral and freezes attributes in range") {
    TransformChain chain{{BaseOpKind::Rotate, BaseOpKind::Scale, BaseOpKind::Posterize,
                          BaseOpKind::Cutout, BaseOpKind::HSV}};
    Rng rng(41);
    for (int rep = 0; rep < 200; ++rep) {
        auto prm = init_params<double>(chain, rng);
        REQUIRE(prm.learnable.size() == 5);
        REQUIRE(prm.frozen.size() == 5);
        for (std::size_t i = 0; i < chain.ops.size(); ++i) {
            const auto& info = base_op_info(chain.ops[i]);
            REQUIRE(prm.learnable[i].numel() == std::size_t(info.param_count));
            for (int j = 0; j < info.param_count; ++j) {
                const double v = prm.learnable[i].values()[std::size_t(j)];
                const double width = info.hi[j] - info.lo[j];
                CHECK(v >= info.neutral[j] - 0.1 * width - 1e-12);
                CHECK(v <= info.neutral[j] + 0.1 * width + 1e-12);
                CHECK(v >= info.lo[j]);
                CHECK(v <= info.hi[j]);
            }
        }
        CHECK(prm.frozen[2].posterize_bits >= 3);
        CHECK(prm.frozen[2].posterize_bits <= 8);
        CHECK(prm.frozen[3].cutout_frac >= 0.1);
        CHECK(prm.frozen[3].cutout_frac <= 0.4);
        CHECK(prm.frozen[3].cutout_cy >= 0.0);
        CHECK(prm.frozen[3].cutout_cy < 1.0);
    }

    // Scale parameter spans neutral 1 with interval width 1.5.
    Rng rs(42);
    TransformChain sc{{BaseOpKind::Scale}};
    for (int rep = 0; rep < 100; ++rep) {
        const double v = init_params<double>(sc, rs).learnable[0].values()[0];
        CHECK(v >= 0.85 - 1e-12);
        CHECK(v <= 1.15 + 1e-12);
    }

    // Identical stream states produce identical parameters.
    Rng ra(99), rb(99);
    auto pa = init_params<double>(chain, ra);
    auto pb = init_params<double>(chain, rb);
    for (std::size_t i = 0; i < pa.learnable.size(); ++i)
        CHECK(pa.learnable[i].values() == pb.learnable[i].values());
    CHECK(pa.frozen[2].posterize_bits == pb.frozen[2].posterize_bits);
    CHECK(pa.frozen[3].cutout_frac == pb.frozen[3].cutout_frac);
}

TEST_CASE("every parameterized differentiable op is the identity at neutral") {
    const Tn x = random_image(2, 10, 10, 77);
    for (int k = 0; k < kNumBaseOps; ++k) {
        const auto kind = BaseOpKind(k);
        const auto& info = base_op_info(kind);
        if (!info.learnable || !info.differentiable) continue;
        std::vector<double> nv(info.neutral, info.neutral + info.param_count);
        Tn p = Tn::from_values({std::size_t(info.param_count)}, std::move(nv));
        Tn out = apply_base(kind, p, FrozenAttrs{}, x);
        INFO("op " << info.name);
        CHECK(max_abs_diff(out, x) < 1e-5);
    }
}

TEST_CASE("a chain of neutral ops is the identity") {
    const Tn x = random_image(2, 8, 8, 78);
    TransformChain chain{{BaseOpKind::Translate, BaseOpKind::Rotate}};
    TransformParams<double> prm;
    prm.learnable = {Tn::from_values({2}, {0.0, 0.0}), params1(0.0)};
    prm.frozen.assign(2, FrozenAttrs{});
    CHECK(max_abs_diff(apply_chain(chain, prm, x), x) < 1e-5);
}

TEST_CASE("outputs stay inside [0,1] for random valid parameters") {
    ChainDistribution dist;
    Rng rng(303);
    const Tn x = random_image(2, 8, 8, 79);
    for (int rep = 0; rep < 40; ++rep) {
        TransformChain chain = sample_chain(dist, rng);
        auto prm = init_params<double>(chain, rng);
        // Push parameters around, then project back, as the trainer would.
        for (auto& t : prm.learnable)
            for (auto& v : t.values()) v += rng.uniform(-1.0, 1.0);
        clamp_params(chain, prm);
        Tn out = apply_chain(chain, prm, x);
        REQUIRE(out.shape() == x.shape());
        for (double v : out.values()) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
    }
}

TEST_CASE("hsv moves pure red to pure green under a one-third hue turn") {
    Tn x = Tn::zeros({1, 3, 2, 2});
    for (std::size_t i = 0; i < 4; ++i) x.values()[i] = 1.0;  // red plane
    Tn p = Tn::from_values({3}, {1.0 / 3.0, 0.0, 0.0});
    Tn out = apply_base(BaseOpKind::HSV, p, FrozenAttrs{}, x);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            CHECK(std::abs(out.at({0, 0, i, j})) < 1e-4);
            CHECK(std::abs(out.at({0, 1, i, j}) - 1.0) < 1e-4);
            CHECK(std::abs(out.at({0, 2, i, j})) < 1e-4);
        }
}

TEST_CASE("solarize fully inverts at weight one and is an involution there") {
    Tn x = Tn::full({1, 3, 2, 2}, 0.2);
    Tn out = apply_base(BaseOpKind::Solarize, params1(1.0), FrozenAttrs{}, x);
    CHECK(out.at({0, 0, 0, 0}) == doctest::Approx(0.8).epsilon(1e-6));
    Tn img = random_image(1, 6, 6, 80);
    Tn once = apply_base(BaseOpKind::Solarize, params1(1.0), FrozenAttrs{}, img);
    Tn twice = apply_base(BaseOpKind::Solarize, params1(1.0), FrozenAttrs{}, once);
    CHECK(max_abs_diff(twice, img) < 1e-6);
}

TEST_CASE("posterize keeps 8-bit-quantized input unchanged at full depth") {
    Tn x = Tn::zeros({1, 3, 4, 4});
    Rng rng(81);
    for (auto& v : x.values()) v = double(rng.uniform_int(256)) / 255.0;
    FrozenAttrs fz;
    fz.posterize_bits = 8;
    Tn out = apply_base(BaseOpKind::Posterize, Tn(), fz, x);
    CHECK(max_abs_diff(out, x) < 1e-9);

    // At 3 bits the top bits survive: level 196 -> 192.
    fz.posterize_bits = 3;
    Tn y = Tn::full({1, 3, 2, 2}, 196.0 / 255.0);
    Tn out3 = apply_base(BaseOpKind::Posterize, Tn(), fz, y);
    CHECK(out3.at({0, 0, 0, 0}) == doctest::Approx(192.0 / 255.0).epsilon(1e-9));
}

TEST_CASE("equalize follows the classic cumulative-histogram table") {
    // One 4x4 plane holding twelve pixels at level 10 and four at level 200:
    // the map sends the low level to 0 and the high level to full scale.
    std::vector<double> plane(16, 10.0 / 255.0);
    plane[3] = plane[7] = plane[11] = plane[15] = 200.0 / 255.0;
    std::vector<double> img;
    for (int c = 0; c < 3; ++c) img.insert(img.end(), plane.begin(), plane.end());
    Tn x = Tn::from_values({1, 3, 4, 4}, std::move(img));
    Tn out = apply_base(BaseOpKind::Equalize, Tn(), FrozenAttrs{}, x);
    for (std::size_t i = 0; i < 16; ++i) {
        const double expect = (i % 4 == 3) ? 1.0 : 0.0;
        CHECK(std::abs(out.values()[i] - expect) < 1e-9);
    }

    // A constant plane stays untouched.
    Tn flat = Tn::full({1, 3, 4, 4}, 0.37);
    CHECK(max_abs_diff(apply_base(BaseOpKind::Equalize, Tn(), FrozenAttrs{}, flat), flat) == 0.0);
}

TEST_CASE("cutout zeroes exactly the frozen square") {
    FrozenAttrs fz;
    fz.cutout_frac = 0.25;  // side 2 on an 8x8 image
    fz.cutout_cy = 0.5;
    fz.cutout_cx = 0.5;
    Tn x = Tn::full({1, 3, 8, 8}, 0.6);
    Tn out = apply_base(BaseOpKind::Cutout, Tn(), fz, x);
    int zeros = 0;
    for (double v : out.values()) {
        CHECK((v == 0.0 || v == 0.6));
        if (v == 0.0) ++zeros;
    }
    CHECK(zeros == 2 * 2 * 3);
    CHECK(out.at({0, 0, 3, 3}) == 0.0);
    CHECK(out.at({0, 0, 5, 5}) == 0.6);
}

TEST_CASE("clamp_params projects, wraps hue, and is idempotent") {
    TransformChain chain{{BaseOpKind::Scale, BaseOpKind::HSV}};
    TransformParams<double> prm;
    prm.learnable = {params1(3.7), Tn::from_values({3}, {0.7, -2.0, 0.3})};
    prm.frozen.assign(2, FrozenAttrs{});
    clamp_params(chain, prm);
    CHECK(prm.learnable[0].values()[0] == 2.0);
    CHECK(prm.learnable[1].values()[0] == doctest::Approx(-0.3).epsilon(1e-12));
    CHECK(prm.learnable[1].values()[1] == -0.5);
    CHECK(prm.learnable[1].values()[2] == 0.3);

    auto before = prm.learnable[1].values();
    clamp_params(chain, prm);
    CHECK(prm.learnable[1].values() == before);

    // Already-valid parameters are returned unchanged.
    TransformParams<double> ok;
    ok.learnable = {params1(1.3), Tn::from_values({3}, {0.21, -0.4, 0.11})};
    ok.frozen.assign(2, FrozenAttrs{});
    auto keep0 = ok.learnable[0].values();
    auto keep1 = ok.learnable[1].values();
    clamp_params(chain, ok);
    CHECK(ok.learnable[0].values() == keep0);
    CHECK(ok.learnable[1].values() == keep1);
}

TEST_CASE("apply_base rejects out-of-range images and parameters") {
    Tn bad = Tn::full({1, 3, 4, 4}, 0.5);
    bad.values()[7] = 1.1;
    CHECK_THROWS_AS(apply_base(BaseOpKind::Solarize, params1(0.5), FrozenAttrs{}, bad),
                    ContractError);

    Tn ok = Tn::full({1, 3, 4, 4}, 0.5);
    CHECK_THROWS_AS(apply_base(BaseOpKind::Scale, params1(2.5), FrozenAttrs{}, ok),
                    ContractError);
    CHECK_THROWS_AS(apply_base(BaseOpKind::Rotate, params1(-0.7), FrozenAttrs{}, ok),
                    ContractError);
    CHECK_THROWS_AS(apply_base(BaseOpKind::Rotate, Tn::from_values({2}, {0.1, 0.2}),
                               FrozenAttrs{}, ok),
                    ContractError);
}

TEST_CASE("identical seeds reproduce chains, parameters, and outputs bitwise") {
    const Tn x = random_image(2, 8, 8, 82);
    auto run = [&](std::uint64_t seed) {
        Rng rng(seed);
        ChainDistribution dist;
        TransformChain chain = sample_chain(dist, rng);
        auto prm = init_params<double>(chain, rng);
        return apply_chain(chain, prm, x).values();
    };
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 99ull})
        CHECK(run(seed) == run(seed));
}

TEST_CASE("transform gradients match finite differences") {
    for (const auto& r : advst::run_transform_gradchecks()) {
        INFO(r.name << " err=" << r.max_rel_err << " tol=" << r.tol);
        CHECK(r.pass());
    }
}

TEST_CASE("preview grids are valid binary PGM/PPM files") {
    const char* path = "preview_test.ppm";
    Tn x = random_image(5, 6, 7, 83);
    advst::write_image_grid(path, x);
    std::ifstream f(path, std::ios::binary);
    REQUIRE(bool(f));
    std::string magic;
    std::size_t w = 0, h = 0;
    int maxval = 0;
    f >> magic >> w >> h >> maxval;
    CHECK(magic == "P6");
    CHECK(w == 3 * 7);  // ceil(sqrt(5)) = 3 columns
    CHECK(h == 2 * 6);
    CHECK(maxval == 255);
    f.get();  // single whitespace after the header
    std::vector<unsigned char> pix(w * h * 3);
    f.read(reinterpret_cast<char*>(pix.data()), std::streamsize(pix.size()));
    CHECK(f.gcount() == std::streamsize(pix.size()));
    // First pixel comes from image 0 at (0,0).
    CHECK(int(pix[0]) == int(std::lround(x.at({0, 0, 0, 0}) * 255.0)));
    std::remove(path);

    Tn gray = Tn::full({2, 1, 4, 4}, 0.5);
    advst::write_image_grid("preview_test.pgm", gray);
    std::ifstream g("preview_test.pgm", std::ios::binary);
    std::string m2;
    g >> m2;
    CHECK(m2 == "P5");
    std::remove("preview_test.pgm");
}
