#include "gsec/nn/complexity.hpp"

#include <cstdio>
#include <sstream>

#include "gsec/error.hpp"

namespace gsec::nn {

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Linear:
            return "linear";
        case LayerKind::BatchNorm:
            return "batchnorm";
        case LayerKind::Conv:
            return "conv";
        case LayerKind::Cbam:
            return "cbam";
    }
    return "?";
}

void LayerSpec::validate() const {
    auto require = [this](bool ok, const char* what) {
        if (!ok) {
            throw InvalidParam("layer '" + name + "': " + what);
        }
    };
    require(in > 0 && out > 0, "channels must be positive");
    require(kernel > 0 && stride > 0 && groups > 0, "kernel, stride and groups must be positive");
    require(positions >= 0, "positions must be non-negative");
    require(in % groups == 0 && out % groups == 0, "groups must divide both channel counts");
    if (kind == LayerKind::BatchNorm || kind == LayerKind::Cbam) {
        require(in == out, "channel count must be preserved");
    }
    if (kind == LayerKind::Cbam) {
        require(reduction > 0 && in % reduction == 0, "reduction must divide the channel count");
    }
}

LayerCount count_layer(const LayerSpec& spec) {
    spec.validate();
    LayerCount c;
    c.spec = spec;
    const std::int64_t in = spec.in;
    const std::int64_t out = spec.out;
    switch (spec.kind) {
        case LayerKind::Linear:
            c.params = in * out + (spec.bias ? out : 0);
            c.macs = spec.positions * in * out;
            break;
        case LayerKind::BatchNorm:
            c.params = 2 * in;
            c.macs = spec.positions * in;
            break;
        case LayerKind::Conv: {
            const std::int64_t per_position = out * (in / spec.groups) * spec.kernel * spec.kernel;
            c.params = per_position + (spec.bias ? out : 0);
            c.macs = spec.positions * per_position;
            break;
        }
        case LayerKind::Cbam: {
            const std::int64_t hidden = in / spec.reduction;
            constexpr std::int64_t spatial_taps = 2 * 7 * 7;
            c.params = (in * hidden + hidden) + (hidden * in + in) + (spatial_taps + 1);
            c.macs = 2 * (in * hidden + hidden * in) + spec.positions * spatial_taps + 2 * spec.positions * in;
            break;
        }
    }
    return c;
}

ComplexityReport count_complexity(const std::vector<LayerSpec>& specs) {
    ComplexityReport report;
    for (const auto& spec : specs) {
        auto c = count_layer(spec);
        report.params += c.params;
        report.macs += c.macs;
        GroupTotals* group = nullptr;
        for (auto& g : report.groups) {
            if (g.group == spec.group) {
                group = &g;
            }
        }
        if (group == nullptr) {
            report.groups.push_back({spec.group, 0, 0});
            group = &report.groups.back();
        }
        group->params += c.params;
        group->macs += c.macs;
        report.layers.push_back(std::move(c));
    }
    return report;
}

std::string format_report(const ComplexityReport& report) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-28s %-9s %-8s %6s %6s %3s %9s %10s %16s\n", "layer", "group", "kind", "in",
                  "out", "k", "positions", "params", "MACs");
    os << line;
    for (const auto& c : report.layers) {
        const auto& s = c.spec;
        std::snprintf(line, sizeof line, "%-28s %-9s %-8s %6d %6d %3d %9lld %10lld %16lld\n", s.name.c_str(),
                      s.group.c_str(), layer_kind_name(s.kind), s.in, s.out, s.kernel,
                      static_cast<long long>(s.positions), static_cast<long long>(c.params),
                      static_cast<long long>(c.macs));
        os << line;
    }
    os << '\n';
    for (const auto& g : report.groups) {
        std::snprintf(line, sizeof line, "%-12s params %10lld (%.4f M)   MACs %14lld (%.4f G)\n", g.group.c_str(),
                      static_cast<long long>(g.params), g.params / 1e6, static_cast<long long>(g.macs),
                      g.macs / 1e9);
        os << line;
    }
    std::snprintf(line, sizeof line, "%-12s params %10lld (%.4f M)   MACs %14lld (%.4f G)\n", "total",
                  static_cast<long long>(report.params), report.params / 1e6, static_cast<long long>(report.macs),
                  report.macs / 1e9);
    os << line;
    return os.str();
}

}  // namespace gsec::nn
