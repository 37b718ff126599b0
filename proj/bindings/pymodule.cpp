// Python bindings for the detector core: model forward/detect, dataset
// generation, Hungarian matching, COCO-style evaluation, cost accounting,
// and checkpoint round-trips. Images cross the boundary as float64 numpy
// arrays shaped (3, S, S) in [0, 1]; boxes as (cx, cy, w, h) in [0, 1].
#include "paqdet/analysis.hpp"
#include "paqdet/data.hpp"
#include "paqdet/eval.hpp"
#include "paqdet/matching.hpp"
#include "paqdet/model.hpp"
#include "paqdet/train.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace py = pybind11;
using namespace paqdet;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image image_from_array(const DArray& arr) {
    if (arr.ndim() != 3 || arr.shape(0) != 3 || arr.shape(1) != arr.shape(2))
        throw std::invalid_argument("image must have shape (3, S, S)");
    Image img;
    img.size = static_cast<int>(arr.shape(1));
    img.data.assign(arr.data(), arr.data() + arr.size());
    return img;
}

py::array image_to_array(const Image& img) {
    DArray arr({static_cast<py::ssize_t>(3), static_cast<py::ssize_t>(img.size),
                static_cast<py::ssize_t>(img.size)});
    std::memcpy(arr.mutable_data(), img.data.data(), img.data.size() * sizeof(double));
    return arr;
}

py::array tensor_to_array(const ad::Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    DArray arr(shape);
    std::memcpy(arr.mutable_data(), t.values().data(), t.size() * sizeof(double));
    return arr;
}

py::array boxes_to_array(const std::vector<match::Box>& boxes) {
    DArray arr({static_cast<py::ssize_t>(boxes.size()), static_cast<py::ssize_t>(4)});
    double* p = arr.mutable_data();
    for (const auto& b : boxes) {
        *p++ = b.cx;
        *p++ = b.cy;
        *p++ = b.w;
        *p++ = b.h;
    }
    return arr;
}

py::dict cost_report_to_dict(const analysis::CostReport& r) {
    py::dict d;
    d["total_params"] = r.total_params;
    d["paq_params"] = r.paq_params;
    d["total_flops"] = r.total_flops;
    d["paq_flops"] = r.paq_flops;
    return d;
}

py::dict ap_result_to_dict(const eval::APResult& r) {
    py::dict d;
    d["map50"] = r.map50;
    d["map5095"] = r.map5095;
    d["precision"] = r.precision;
    d["recall"] = r.recall;
    d["per_class_ap50"] = r.per_class_ap50;
    d["per_class_ap5095"] = r.per_class_ap5095;
    return d;
}

}  // namespace

PYBIND11_MODULE(_paqdet, mod) {
    mod.doc() = "Detection transformer with pattern-composed dynamic queries";

    py::class_<match::Box>(mod, "Box")
        .def(py::init<>())
        .def(py::init([](double cx, double cy, double w, double h) {
                 return match::Box{cx, cy, w, h};
             }),
             py::arg("cx"), py::arg("cy"), py::arg("w"), py::arg("h"))
        .def_readwrite("cx", &match::Box::cx)
        .def_readwrite("cy", &match::Box::cy)
        .def_readwrite("w", &match::Box::w)
        .def_readwrite("h", &match::Box::h)
        .def("valid", &match::Box::valid)
        .def("__repr__", [](const match::Box& b) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "Box(cx=%g, cy=%g, w=%g, h=%g)", b.cx, b.cy, b.w,
                          b.h);
            return std::string(buf);
        });

    mod.def("iou", &match::iou, py::arg("a"), py::arg("b"));
    mod.def("giou", &match::giou, py::arg("a"), py::arg("b"));

    py::class_<model::ModelConfig>(mod, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("d", &model::ModelConfig::d)
        .def_readwrite("image_size", &model::ModelConfig::image_size)
        .def_readwrite("patch", &model::ModelConfig::patch)
        .def_readwrite("K", &model::ModelConfig::K)
        .def_readwrite("m", &model::ModelConfig::m)
        .def_readwrite("L", &model::ModelConfig::L)
        .def_readwrite("H", &model::ModelConfig::H)
        .def_readwrite("C", &model::ModelConfig::C)
        .def_readwrite("ffn_hidden", &model::ModelConfig::ffn_hidden)
        .def_readwrite("wgen_hidden", &model::ModelConfig::wgen_hidden)
        .def_readwrite("reposition_each_layer", &model::ModelConfig::reposition_each_layer)
        .def_property(
            "mode", [](const model::ModelConfig& c) { return model::to_string(c.mode); },
            [](model::ModelConfig& c, const std::string& s) {
                c.mode = model::mode_from_string(s);
            })
        .def("tokens", &model::ModelConfig::tokens)
        .def("validate", &model::ModelConfig::validate)
        .def("__repr__", [](const model::ModelConfig& c) {
            return "ModelConfig(mode=" + model::to_string(c.mode) + ", d=" + std::to_string(c.d) +
                   ", K=" + std::to_string(c.K) + ", m=" + std::to_string(c.m) + ")";
        });

    py::class_<eval::Detection>(mod, "Detection")
        .def(py::init<>())
        .def(py::init([](int image_id, int class_id, double score, const match::Box& box) {
                 return eval::Detection{image_id, class_id, score, box};
             }),
             py::arg("image_id"), py::arg("class_id"), py::arg("score"), py::arg("box"))
        .def_readwrite("image_id", &eval::Detection::image_id)
        .def_readwrite("class_id", &eval::Detection::class_id)
        .def_readwrite("score", &eval::Detection::score)
        .def_readwrite("box", &eval::Detection::box)
        .def("__repr__", [](const eval::Detection& d) {
            char buf[128];
            std::snprintf(buf, sizeof(buf),
                          "Detection(image_id=%d, class_id=%d, score=%.4f)", d.image_id,
                          d.class_id, d.score);
            return std::string(buf);
        });

    py::class_<eval::GtInstance>(mod, "GtInstance")
        .def(py::init<>())
        .def(py::init([](int image_id, int class_id, const match::Box& box) {
                 return eval::GtInstance{image_id, class_id, box};
             }),
             py::arg("image_id"), py::arg("class_id"), py::arg("box"))
        .def_readwrite("image_id", &eval::GtInstance::image_id)
        .def_readwrite("class_id", &eval::GtInstance::class_id)
        .def_readwrite("box", &eval::GtInstance::box);

    py::class_<model::Detector>(mod, "Detector")
        .def(py::init([](const model::ModelConfig& cfg, std::uint64_t seed) {
                 return model::Detector(cfg, seed);
             }),
             py::arg("config"), py::arg("seed") = 0)
        .def_property_readonly("config",
                               [](const model::Detector& d) { return d.config(); })
        .def("forward",
             [](const model::Detector& det, const DArray& image) {
                 Image img = image_from_array(image);
                 auto fr = det.forward(img, static_cast<ad::Graph*>(nullptr));
                 py::dict out;
                 out["logits"] = tensor_to_array(fr.out.per_layer_logits.back());
                 out["boxes"] = tensor_to_array(fr.out.per_layer_boxes.back());
                 out["content"] = tensor_to_array(fr.queries.content);
                 out["references"] = tensor_to_array(fr.queries.references);
                 out["selected_indices"] = fr.queries.selected_indices;
                 out["weights"] = fr.queries.weights.defined()
                                      ? py::object(tensor_to_array(fr.queries.weights))
                                      : py::object(py::none());
                 return out;
             },
             py::arg("image"),
             "Run the detector on one image. Returns final-layer logits (K, C), boxes "
             "(K, 4), composed content queries, reference boxes, the selected encoder "
             "token indices, and the composition weights (None in baseline mode).")
        .def("detect",
             [](const model::Detector& det, const DArray& image, double score_threshold,
                int max_det, int image_id) {
                 Image img = image_from_array(image);
                 auto fr = det.forward(img, static_cast<ad::Graph*>(nullptr));
                 return eval::extract_detections(fr.out, image_id, score_threshold, max_det);
             },
             py::arg("image"), py::arg("score_threshold") = 0.5, py::arg("max_det") = 100,
             py::arg("image_id") = 0,
             "Thresholded, score-sorted detections for one image.")
        .def("save",
             [](const model::Detector& det, const std::string& path) {
                 train::save_checkpoint(det, 0, {0, 0, 0, 0}, path);
             },
             py::arg("path"))
        .def_static("load",
                    [](const std::string& path) { return train::load_checkpoint(path); },
                    py::arg("path"))
        .def("num_params", [](const model::Detector& det) {
            long long n = 0;
            for (int i = 0; i < det.params().size(); ++i)
                n += static_cast<long long>(det.params().at(i).values.size());
            return n;
        });

    py::class_<data::DatasetConfig>(mod, "DatasetConfig")
        .def(py::init<>())
        .def_readwrite("train_images", &data::DatasetConfig::train_images)
        .def_readwrite("val_images", &data::DatasetConfig::val_images)
        .def_readwrite("test_images", &data::DatasetConfig::test_images)
        .def_readwrite("image_size", &data::DatasetConfig::image_size)
        .def_readwrite("class_probs", &data::DatasetConfig::class_probs)
        .def_readwrite("min_objects", &data::DatasetConfig::min_objects)
        .def_readwrite("max_objects", &data::DatasetConfig::max_objects)
        .def_readwrite("seed", &data::DatasetConfig::seed)
        .def_readwrite("overlap_allowance", &data::DatasetConfig::overlap_allowance)
        .def("validate", &data::DatasetConfig::validate);

    mod.def("class_names", [] {
        std::vector<std::string> names(data::kClassNames.begin(), data::kClassNames.end());
        return names;
    });

    mod.def("generate_scene",
            [](const data::DatasetConfig& cfg, int image_id) {
                auto scene = data::generate_scene(cfg, image_id);
                return py::make_tuple(image_to_array(scene.image),
                                      boxes_to_array(scene.annotation.boxes),
                                      scene.annotation.labels);
            },
            py::arg("config"), py::arg("image_id") = 0,
            "Deterministic synthetic scene: (image (3, S, S), boxes (N, 4), labels).");

    mod.def("generate_dataset",
            [](const data::DatasetConfig& cfg, const std::string& root) {
                auto counts = data::generate_dataset(cfg, root);
                py::dict d;
                d["train"] = counts[0];
                d["val"] = counts[1];
                d["test"] = counts[2];
                return d;
            },
            py::arg("config"), py::arg("root"),
            "Write train/val/test splits under root; returns per-class instance counts.");

    mod.def("hungarian",
            [](const DArray& cost) {
                if (cost.ndim() != 2)
                    throw std::invalid_argument("cost must be a 2-d array (queries x gts)");
                int K = static_cast<int>(cost.shape(0));
                int G = static_cast<int>(cost.shape(1));
                std::vector<double> flat(cost.data(), cost.data() + cost.size());
                return match::hungarian(flat, K, G).pairs;
            },
            py::arg("cost"),
            "Minimum-cost assignment of all columns (gts) to distinct rows (queries); "
            "returns (query, gt) pairs ordered by gt.");

    mod.def("compute_map",
            [](const std::vector<eval::Detection>& dets,
               const std::vector<eval::GtInstance>& gts) {
                return ap_result_to_dict(eval::compute_map(dets, gts));
            },
            py::arg("detections"), py::arg("ground_truths"),
            "COCO-style AP: 101-point interpolation, IoU 0.50 and 0.50:0.95 means.");

    mod.def("count_params",
            [](const model::ModelConfig& cfg) { return cost_report_to_dict(analysis::count_params(cfg)); },
            py::arg("config"));
    mod.def("count_flops",
            [](const model::ModelConfig& cfg) { return cost_report_to_dict(analysis::count_flops(cfg)); },
            py::arg("config"));
    mod.def("gini", &analysis::gini, py::arg("values"),
            "Gini coefficient of a nonnegative vector; 0 = uniform.");
}
