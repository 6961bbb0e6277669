#include <doctest.h>

#include <cstdint>
#include <vector>

#include "gsec/error.hpp"
#include "gsec/model.hpp"
#include "gsec/nn/complexity.hpp"

using namespace gsec;
using namespace gsec::nn;

namespace {

LayerSpec conv(int in, int out, int k, int stride, int groups, bool bias, std::int64_t positions) {
    LayerSpec s;
    s.name = "c";
    s.group = "unet";
    s.kind = LayerKind::Conv;
    s.in = in;
    s.out = out;
    s.kernel = k;
    s.stride = stride;
    s.groups = groups;
    s.bias = bias;
    s.positions = positions;
    return s;
}

// Runs a cross-correlation over a zero-padded input and counts every
// multiply-accumulate it executes; padded taps count like any other.
std::int64_t instrumented_conv_macs(int in, int out, int k, int stride, int pad, int groups, int h, int w) {
    const int hp = h + 2 * pad;
    const int wp = w + 2 * pad;
    std::vector<double> x(static_cast<std::size_t>(in * hp * wp), 1.0);
    std::vector<double> weight(static_cast<std::size_t>(out * (in / groups) * k * k), 0.5);
    std::int64_t macs = 0;
    double sink = 0.0;
    const int ho = (hp - k) / stride + 1;
    const int wo = (wp - k) / stride + 1;
    for (int o = 0; o < out; ++o) {
        const int g = o / (out / groups);
        for (int i = 0; i < ho; ++i) {
            for (int j = 0; j < wo; ++j) {
                double acc = 0.0;
                for (int c = 0; c < in / groups; ++c) {
                    const int ci = g * (in / groups) + c;
                    for (int u = 0; u < k; ++u) {
                        for (int v = 0; v < k; ++v) {
                            acc += weight[static_cast<std::size_t>(((o * (in / groups) + c) * k + u) * k + v)] *
                                   x[static_cast<std::size_t>((ci * hp + i * stride + u) * wp + j * stride + v)];
                            ++macs;
                        }
                    }
                }
                sink += acc;
            }
        }
    }
    CHECK(sink > 0.0);
    return macs;
}

}  // namespace

TEST_CASE("closed-form examples") {
    const auto head = count_layer(conv(64, 1, 1, 1, 1, false, 128 * 128));
    CHECK(head.params == 64);
    CHECK(head.macs == 1'048'576);
    CHECK(count_layer(conv(64, 1, 1, 1, 1, true, 128 * 128)).params == 65);

    const auto dw = count_layer(conv(64, 64, 3, 1, 64, false, 128 * 128));
    const auto pw = count_layer(conv(64, 64, 1, 1, 1, false, 128 * 128));
    CHECK(dw.params + pw.params == 4672);
    CHECK(dw.macs + pw.macs == std::int64_t{128} * 128 * 4672);

    LayerSpec lin;
    lin.kind = LayerKind::Linear;
    lin.in = 12;
    lin.out = 64;
    lin.bias = true;
    lin.positions = 10;
    const auto l = count_layer(lin);
    CHECK(l.params == 12 * 64 + 64);
    CHECK(l.macs == 10 * 12 * 64);

    LayerSpec bn;
    bn.kind = LayerKind::BatchNorm;
    bn.in = bn.out = 32;
    bn.positions = 100;
    CHECK(count_layer(bn).params == 64);
    CHECK(count_layer(bn).macs == 3200);
}

TEST_CASE("conv MACs equal instrumented brute-force counts") {
    struct Case {
        int in, out, k, stride, pad, groups, h, w;
    };
    for (const auto& c : {Case{3, 4, 3, 1, 1, 1, 5, 6}, Case{4, 4, 3, 1, 1, 4, 7, 7}, Case{4, 6, 1, 1, 0, 1, 3, 9},
                          Case{2, 1, 7, 1, 3, 1, 8, 8}, Case{4, 8, 3, 2, 1, 2, 9, 6}}) {
        const int ho = (c.h + 2 * c.pad - c.k) / c.stride + 1;
        const int wo = (c.w + 2 * c.pad - c.k) / c.stride + 1;
        const auto counted = count_layer(conv(c.in, c.out, c.k, c.stride, c.groups, false, std::int64_t{ho} * wo));
        CHECK(counted.macs == instrumented_conv_macs(c.in, c.out, c.k, c.stride, c.pad, c.groups, c.h, c.w));
    }
}

TEST_CASE("report totals and groups") {
    auto a = conv(8, 8, 3, 1, 8, false, 16);
    a.group = "encoder";
    const auto b = conv(8, 4, 1, 1, 1, true, 16);
    const auto report = count_complexity({a, b});
    REQUIRE(report.groups.size() == 2);
    CHECK(report.groups[0].group == "encoder");
    CHECK(report.groups[0].params == 72);
    CHECK(report.groups[1].params == 36);
    CHECK(report.params == 108);
    CHECK(report.macs == 16 * 72 + 16 * 32);
    CHECK(format_report(report).find("encoder") != std::string::npos);
}

TEST_CASE("default network within the published budget") {
    const GsecNet<float> net;
    const auto report = count_complexity(net.layer_specs());
    CHECK(report.params >= 240'000);
    CHECK(report.params <= 300'000);
    CHECK(static_cast<double>(report.macs) >= 0.65 * 1.47e9);
    CHECK(static_cast<double>(report.macs) <= 1.35 * 1.47e9);
    REQUIRE(report.groups.size() == 2);
    CHECK(report.groups[0].group == "encoder");
    CHECK(report.groups[1].group == "unet");
    CHECK(report.groups[0].params == 12 * 64 + 64 + 2 * 64);
}

TEST_CASE("accountant agrees with the instantiated network") {
    for (const bool normals : {true, false}) {
        for (const bool attention : {true, false}) {
            ModelConfig cfg;
            cfg.use_normals = normals;
            cfg.attention = attention;
            GsecNet<float> net(cfg);
            CAPTURE(cfg.variant());
            CHECK(count_complexity(net.layer_specs()).params == net.parameter_count());
        }
    }
    ModelConfig small;
    small.rows = small.cols = 16;
    small.ladder = {8, 8, 16, 32};
    small.encoder_channels = 8;
    small.cbam_reduction = 4;
    GsecNet<double> net(small);
    CHECK(count_complexity(net.layer_specs()).params == net.parameter_count());
}

TEST_CASE("spec validation") {
    CHECK_THROWS_AS(count_layer(conv(0, 4, 3, 1, 1, false, 4)), InvalidParam);
    CHECK_THROWS_AS(count_layer(conv(6, 4, 3, 1, 4, false, 4)), InvalidParam);
    CHECK_THROWS_AS(count_layer(conv(4, 4, 0, 1, 1, false, 4)), InvalidParam);
    CHECK_THROWS_AS(count_layer(conv(4, 4, 3, 1, 1, false, -1)), InvalidParam);
    LayerSpec cbam;
    cbam.kind = LayerKind::Cbam;
    cbam.in = cbam.out = 20;
    cbam.reduction = 16;
    cbam.positions = 4;
    CHECK_THROWS_AS(count_layer(cbam), InvalidParam);
    cbam.in = cbam.out = 32;
    const auto c = count_layer(cbam);
    CHECK(c.params == (32 * 2 + 2) + (2 * 32 + 32) + 99);
    CHECK(c.macs == 2 * (2 * 32 * 2) + 4 * 98 + 2 * 4 * 32);
}
