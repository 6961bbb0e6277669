#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "gsec/cli.hpp"
#include "gsec/config.hpp"
#include "gsec/geometry.hpp"
#include "gsec/lidar_io.hpp"
#include "gsec/metrics.hpp"
#include "gsec/model.hpp"
#include "gsec/nn/complexity.hpp"
#include "gsec/nn/loss.hpp"
#include "gsec/pillars.hpp"
#include "gsec/pipeline.hpp"
#include "gsec/sampling.hpp"

namespace py = pybind11;
using namespace gsec;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

PointCloud cloud_from_array(const FloatArray& points) {
    if (points.ndim() != 2 || points.shape(1) != 4) {
        throw ShapeMismatch("points must have shape (N, 4)");
    }
    PointCloud cloud;
    const auto r = points.unchecked<2>();
    cloud.points.resize(static_cast<std::size_t>(points.shape(0)));
    for (py::ssize_t i = 0; i < points.shape(0); ++i) {
        cloud.points[static_cast<std::size_t>(i)] = {r(i, 0), r(i, 1), r(i, 2), r(i, 3)};
    }
    return cloud;
}

FloatArray cloud_to_array(const PointCloud& cloud) {
    FloatArray out({static_cast<py::ssize_t>(cloud.size()), py::ssize_t{4}});
    auto w = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        const auto row = static_cast<py::ssize_t>(i);
        w(row, 0) = p.x;
        w(row, 1) = p.y;
        w(row, 2) = p.z;
        w(row, 3) = p.intensity;
    }
    return out;
}

template <typename T>
py::array_t<T> to_array(const std::vector<T>& values) {
    py::array_t<T> out(static_cast<py::ssize_t>(values.size()));
    std::copy(values.begin(), values.end(), out.mutable_data());
    return out;
}

py::dict counts_dict(std::int64_t params, std::int64_t macs) {
    py::dict d;
    d["params"] = params;
    d["macs"] = macs;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "GSECnet ground segmentation: I/O, sampling, geometry, pillars, loss, metrics and the CLI.";

    // Translators run newest first, so the base class registers first.
    const auto& base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<DataError>(m, "DataError", base.ptr());

    m.def(
        "read_scan",
        [](const std::filesystem::path& path) {
            const auto scan = read_scan(path);
            py::dict d;
            d["points"] = cloud_to_array(scan.cloud);
            d["dropped_non_finite"] = scan.dropped_non_finite;
            d["record_count"] = scan.record_count;
            return d;
        },
        py::arg("path"));
    m.def(
        "write_scan",
        [](const std::filesystem::path& path, const FloatArray& points) { write_scan(path, cloud_from_array(points)); },
        py::arg("path"), py::arg("points"));
    m.def(
        "read_label_records", [](const std::filesystem::path& path) { return to_array(read_label_records(path)); },
        py::arg("path"));
    m.def(
        "semantic_class", [](std::uint32_t record) { return semantic_class_of(record); }, py::arg("record"));

    m.def(
        "synthetic_frame",
        [](std::uint64_t seed, std::size_t index, bool allow_tilt, double noise_sigma) {
            SynthConfig cfg;
            cfg.allow_tilt = allow_tilt;
            cfg.noise_sigma = noise_sigma;
            const auto cloud = synthetic_frame(cfg, seed, index);
            return py::make_tuple(cloud_to_array(cloud), to_array(cloud.labels));
        },
        py::arg("seed"), py::arg("index") = 0, py::arg("allow_tilt") = true, py::arg("noise_sigma") = 0.01);

    m.def(
        "section_weights",
        [](const std::vector<std::size_t>& counts) {
            SectionHistogram hist;
            hist.counts = counts;
            return section_weights(hist).weights;
        },
        py::arg("counts"));
    m.def(
        "undersample",
        [](const FloatArray& points, std::size_t budget, double interval, std::uint64_t seed, bool controlled) {
            const auto cloud = cloud_from_array(points);
            return to_array(controlled ? undersample_indices(cloud, budget, interval, seed)
                                       : undersample_uniform_indices(cloud, budget, seed));
        },
        py::arg("points"), py::arg("budget"), py::arg("interval") = kDefaultSectionInterval, py::arg("seed") = 0,
        py::arg("controlled") = true);

    m.def(
        "estimate_normals",
        [](const FloatArray& points, std::size_t k, bool corrected_sign) {
            const auto est = estimate_normals(cloud_from_array(points), {k, corrected_sign});
            py::array_t<double> out({static_cast<py::ssize_t>(est.normals.size()), py::ssize_t{3}});
            auto w = out.mutable_unchecked<2>();
            for (std::size_t i = 0; i < est.normals.size(); ++i) {
                const auto row = static_cast<py::ssize_t>(i);
                w(row, 0) = est.normals[i].nx;
                w(row, 1) = est.normals[i].ny;
                w(row, 2) = est.normals[i].nz;
            }
            return py::make_tuple(out, est.fallbacks);
        },
        py::arg("points"), py::arg("k") = 30, py::arg("corrected_sign") = false);

    m.def(
        "pillarize",
        [](const FloatArray& points, std::size_t k, std::uint64_t seed) {
            const auto cloud = cloud_from_array(points);
            const auto normals = estimate_normals(cloud, {k, false});
            const auto grid = pillarize(cloud, normals.normals, GridConfig{}, seed);
            py::dict d;
            d["point_to_pillar"] = to_array(grid.point_to_pillar);
            d["cell_to_pillar"] = to_array(grid.cell_to_pillar);
            d["pillars"] = grid.pillars.size();
            d["out_of_range"] = grid.out_of_range.size();
            return d;
        },
        py::arg("points"), py::arg("k") = 30, py::arg("seed") = 0);

    m.def(
        "focal_loss",
        [](const std::vector<double>& logits, const std::vector<std::uint8_t>& labels, std::optional<double> alpha,
           double gamma) {
            nn::Tensor<double> t({static_cast<int>(logits.size())});
            std::copy(logits.begin(), logits.end(), t.data());
            const auto r = nn::focal_loss(t, labels, {alpha, gamma});
            return py::make_tuple(r.loss, std::vector<double>(r.grad.values().begin(), r.grad.values().end()));
        },
        py::arg("logits"), py::arg("labels"), py::arg("alpha") = 0.25, py::arg("gamma") = 2.0);

    m.def(
        "scores",
        [](std::uint64_t tp, std::uint64_t tn, std::uint64_t fp, std::uint64_t fn) {
            const auto s = scores({tp, tn, fp, fn});
            py::dict d;
            d["accuracy"] = s.accuracy;
            d["miou"] = s.iou;
            d["f1"] = s.f1;
            return d;
        },
        py::arg("tp"), py::arg("tn"), py::arg("fp"), py::arg("fn"));

    m.def(
        "complexity",
        [](bool use_normals, bool attention) {
            RunConfig cfg;
            cfg.network.use_normals = use_normals;
            cfg.network.attention = attention;
            GsecNet<float> net(cfg.model_config());
            const auto report = nn::count_complexity(net.layer_specs());
            py::dict d = counts_dict(report.params, report.macs);
            for (const auto& g : report.groups) {
                d[py::str(g.group)] = counts_dict(g.params, g.macs);
            }
            d["variant"] = cfg.model_config().variant();
            return d;
        },
        py::arg("use_normals") = true, py::arg("attention") = true);

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out;
            std::ostringstream err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = cli::run(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));
}
