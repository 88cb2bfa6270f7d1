// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <fmt/format.h>

#include "swin3d/backbone.hpp"
#include "swin3d/errors.hpp"

namespace swin3d {

std::vector<LabeledScene> make_separable_dataset(std::size_t scenes, std::size_t points_per_scene,
                                                 std::uint64_t seed, std::size_t channels) {
    if (scenes == 0 || points_per_scene == 0) throw InputError("dataset: need at least one scene and one point");
    Rng rng(derive_seed(seed, "dataset"));
    constexpr std::size_t kPatches = 4;
    std::vector<LabeledScene> out;
    std::vector<double> row(channels);
    for (std::size_t s = 0; s < scenes; ++s) {
        LabeledScene scene{PointCloud(channels), {}};
        for (std::size_t p = 0; p < kPatches; ++p) {
            const int cls = static_cast<int>((p + s) % 2);
            std::array<double, 3> center, normal, u, v;
            for (auto& c : center) c = uniform(rng, 0.15, 0.45);
            double len = 0.0;
            do {
                for (auto& c : normal) c = uniform(rng, -1.0, 1.0);
                len = std::sqrt(normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]);
            } while (len < 0.1 || len > 1.0);
            for (auto& c : normal) c /= len;
            // Any vector not parallel to the normal spans the plane with it.
            const std::array<double, 3> seed_axis =
                std::abs(normal[0]) < 0.9 ? std::array<double, 3>{1, 0, 0} : std::array<double, 3>{0, 1, 0};
            u = {normal[1] * seed_axis[2] - normal[2] * seed_axis[1], normal[2] * seed_axis[0] - normal[0] * seed_axis[2],
                 normal[0] * seed_axis[1] - normal[1] * seed_axis[0]};
            const double ul = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
            for (auto& c : u) c /= ul;
            v = {normal[1] * u[2] - normal[2] * u[1], normal[2] * u[0] - normal[0] * u[2],
                 normal[0] * u[1] - normal[1] * u[0]};
            const double half = uniform(rng, 0.08, 0.15);

            const std::size_t count = points_per_scene / kPatches + (p < points_per_scene % kPatches ? 1 : 0);
            for (std::size_t i = 0; i < count; ++i) {
                const double a = uniform(rng, -half, half), b = uniform(rng, -half, half);
                const double n = uniform(rng, -0.004, 0.004);
                for (int k = 0; k < 3; ++k) row[k] = center[k] + a * u[k] + b * v[k] + n * normal[k];
                row[3] = cls == 1 ? uniform(rng, 0.2, 1.0) : uniform(rng, -1.0, -0.2);
                row[4] = uniform(rng, -1.0, 1.0);
                row[5] = uniform(rng, -1.0, 1.0);
                for (std::size_t k = 6; k < channels; ++k) row[k] = normal[k - 6];
                scene.cloud.add(row);
                scene.labels.push_back(cls);
            }
        }
        out.push_back(std::move(scene));
    }
    return out;
}

PreparedScene prepare_labeled_scene(const LabeledScene& scene, const BackboneConfig& config, std::uint64_t seed) {
    if (scene.labels.size() != scene.cloud.size()) {
        throw InputError(fmt::format("dataset: {} labels for {} points", scene.labels.size(), scene.cloud.size()));
    }
    PreparedScene prepared = prepare_scene(scene.cloud, config, seed);
    const auto& finest = prepared.hierarchy.levels.front();
    prepared.labels.resize(finest.size());
    for (std::size_t i = 0; i < finest.size(); ++i) prepared.labels[i] = scene.labels[finest[i].source_point];
    return prepared;
}

Trainer::Trainer(Backbone& model, TrainOptions options) : model_(model), options_(options) {
    model_.visit([&](Parameter& p) { velocity_.emplace(p.name, Tensor::zeros(p.value.shape())); });
}

double Trainer::run_epoch(const std::vector<PreparedScene>& scenes) {
    if (scenes.empty()) throw InputError("train: empty dataset");
    model_.training = true;
    double total = 0.0;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const auto& scene = scenes[s];
        if (scene.labels.size() != scene.hierarchy.levels.front().size()) {
            throw InputError(fmt::format("train: scene {} has no per-voxel labels", s));
        }
        model_.visit([](Parameter& p) { p.zero_grad(); });
        Tape tape;
        const auto stages = encode(tape, scene, model_, options_.forward);
        Var logits = decode_segmentation(tape, scene, stages, model_);
        Var loss = softmax_cross_entropy(tape, logits, scene.labels);
        const double value = tape.value(loss)[0];
        if (!std::isfinite(value)) {
            throw DivergenceError(
                fmt::format("training diverged: non-finite loss {} at epoch {}, scene {}", value, epoch_ + 1, s));
        }
        total += value;
        tape.backward(loss);
        model_.visit([&](Parameter& p) {
            Tensor& vel = velocity_.at(p.name);
            vel.scale_inplace(options_.momentum);
            vel.add_inplace(p.grad);
            for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= options_.learning_rate * vel[i];
        });
    }
    ++epoch_;
    return total / static_cast<double>(scenes.size());
}

NamedTensors Trainer::state() {
    NamedTensors s = model_state(model_);
    for (const auto& [name, v] : velocity_) s.emplace("opt." + name, v);
    s.emplace("meta.epoch", Tensor({1}, {static_cast<double>(epoch_)}));
    return s;
}

void Trainer::restore(const NamedTensors& s) {
    load_model_state(model_, s);
    for (auto& [name, v] : velocity_) {
        const auto it = s.find("opt." + name);
        if (it == s.end()) throw InputError(fmt::format("checkpoint: missing optimizer entry 'opt.{}'", name));
        if (it->second.shape() != v.shape()) throw InputError(fmt::format("checkpoint: 'opt.{}' has wrong shape", name));
        v = it->second;
    }
    const auto it = s.find("meta.epoch");
    if (it == s.end() || it->second.size() != 1) throw InputError("checkpoint: missing 'meta.epoch'");
    epoch_ = static_cast<int>(it->second[0]);
}

double segmentation_accuracy(Backbone& model, const std::vector<PreparedScene>& scenes,
                             const ForwardOptions& options) {
    const bool was_training = model.training;
    model.training = false;
    std::size_t correct = 0, total = 0;
    for (const auto& scene : scenes) {
        Tape tape;
        const auto stages = encode(tape, scene, model, options);
        const Tensor& logits = tape.value(decode_segmentation(tape, scene, stages, model));
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < logits.cols(); ++c)
                if (logits(i, c) > logits(i, best)) best = c;
            correct += static_cast<int>(best) == scene.labels.at(i) ? 1 : 0;
            ++total;
        }
    }
    model.training = was_training;
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

TrainResult train_toy(Backbone& model, const std::vector<PreparedScene>& scenes, const TrainOptions& options) {
    if (scenes.empty()) throw InputError("train: empty dataset");
    Trainer trainer(model, options);
    TrainResult result;
    for (int e = 0; e < options.epochs; ++e) result.loss_curve.push_back(trainer.run_epoch(scenes));
    result.accuracy = segmentation_accuracy(model, scenes, options.forward);
    return result;
}

}  // namespace swin3d
