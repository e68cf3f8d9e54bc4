#include "cirsynth/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "cirsynth/contrastive.hpp"
#include "cirsynth/error.hpp"
#include "cirsynth/hashing.hpp"

namespace cirsynth {

using nlohmann::json;

void TrainConfig::validate() const {
    if (unlabeled_batch_size == 0 || triplet_batch_size == 0) {
        throw Error(ErrorCode::InvalidConfig, "batch sizes must be >= 1");
    }
    if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidConfig, "temperature must be > 0");
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning_rate must be > 0");
    if (zscir_weight < 0.0 || triplet_weight < 0.0 || (zscir_weight == 0.0 && triplet_weight == 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "loss weights must be >= 0 and not both zero");
    }
}

json TrainConfig::to_json() const {
    return {{"learning_rate", learning_rate},
            {"beta1", beta1},
            {"beta2", beta2},
            {"epsilon", epsilon},
            {"unlabeled_batch_size", unlabeled_batch_size},
            {"triplet_batch_size", triplet_batch_size},
            {"temperature", temperature},
            {"zscir_weight", zscir_weight},
            {"triplet_weight", triplet_weight},
            {"steps", steps},
            {"checkpoint_interval", checkpoint_interval},
            {"seed", seed},
            {"zs_text_mode", zs_text_mode == ZsTextMode::Template ? "template" : "raw_tokens"},
            {"prompt", prompt.to_json()}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.unlabeled_batch_size = j.value("unlabeled_batch_size", c.unlabeled_batch_size);
    c.triplet_batch_size = j.value("triplet_batch_size", c.triplet_batch_size);
    c.temperature = j.value("temperature", c.temperature);
    c.zscir_weight = j.value("zscir_weight", c.zscir_weight);
    c.triplet_weight = j.value("triplet_weight", c.triplet_weight);
    c.steps = j.value("steps", c.steps);
    c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
    c.seed = j.value("seed", c.seed);
    const auto mode = j.value("zs_text_mode", std::string("template"));
    if (mode == "template") {
        c.zs_text_mode = ZsTextMode::Template;
    } else if (mode == "raw_tokens") {
        c.zs_text_mode = ZsTextMode::RawTokens;
    } else {
        throw Error(ErrorCode::InvalidConfig, "unknown zs_text_mode '" + mode + "'");
    }
    if (j.contains("prompt")) c.prompt = PromptTemplate::from_json(j["prompt"]);
    c.validate();
    return c;
}

namespace {

Mat encode_images(const Mat& images, const EncoderBundle& encoders) {
    Mat out(static_cast<Eigen::Index>(encoders.output_dim()), images.cols());
    for (Eigen::Index i = 0; i < images.cols(); ++i) out.col(i) = encoders.encode_image(Vec(images.col(i)));
    return out;
}

PromptTemplate zs_template(const PromptTemplate& tmpl, ZsTextMode mode) {
    if (mode == ZsTextMode::Template) return tmpl;
    return PromptTemplate{"", tmpl.separator};
}

struct TripletBatch {
    Mat references;
    Mat targets;
    std::vector<std::string> texts;
};

TripletBatch gather(std::span<const TrainingTriplet> triplets) {
    if (triplets.empty()) throw Error(ErrorCode::InvalidArgument, "empty triplet batch");
    const auto d_ref = triplets[0].reference.size();
    const auto d_tgt = triplets[0].target.size();
    TripletBatch b{Mat(d_ref, static_cast<Eigen::Index>(triplets.size())),
                   Mat(d_tgt, static_cast<Eigen::Index>(triplets.size())), {}};
    b.texts.reserve(triplets.size());
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        const auto& t = triplets[i];
        if (t.status != TripletStatus::Kept) {
            throw Error(ErrorCode::UnfilteredTriplet, "triplet " + std::to_string(i) + " has status " +
                                                          to_string(t.status));
        }
        if (t.reference.size() != d_ref || t.target.size() != d_tgt) {
            throw Error(ErrorCode::DimMismatch, "ragged triplet batch");
        }
        b.references.col(static_cast<Eigen::Index>(i)) = t.reference;
        b.targets.col(static_cast<Eigen::Index>(i)) = t.target;
        b.texts.push_back(t.query_text);
    }
    return b;
}

void axpy(std::vector<double>& acc, double scale, const std::vector<double>& g) {
    if (acc.empty()) acc.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += scale * g[i];
}

}  // namespace

double zscir_loss(const Mat& images, const MappingNetwork& net, const EncoderBundle& encoders, double temperature,
                  const PromptTemplate& tmpl, ZsTextMode mode) {
    if (images.cols() == 0) throw Error(ErrorCode::InvalidArgument, "empty unlabeled batch");
    const std::vector<std::string> empty(static_cast<std::size_t>(images.cols()));
    const ComposedBatch text(images, empty, net, encoders, zs_template(tmpl, mode));
    return contrastive_loss_grad(encode_images(images, encoders), text.features(), temperature, false, false).loss;
}

double triplet_loss(std::span<const TrainingTriplet> triplets, const MappingNetwork& net,
                    const EncoderBundle& encoders, double temperature, const PromptTemplate& tmpl) {
    const auto batch = gather(triplets);
    const ComposedBatch composed(batch.references, batch.texts, net, encoders, tmpl);
    return contrastive_loss_grad(composed.features(), encode_images(batch.targets, encoders), temperature, false,
                                 false)
        .loss;
}

HybridGradient hybrid_loss_and_gradient(const Mat& unlabeled, std::span<const TrainingTriplet> triplets,
                                        const MappingNetwork& net, const EncoderBundle& encoders,
                                        const TrainConfig& config) {
    HybridGradient out;
    if (config.zscir_weight > 0.0) {
        if (unlabeled.cols() == 0) throw Error(ErrorCode::InvalidArgument, "empty unlabeled batch");
        const std::vector<std::string> empty(static_cast<std::size_t>(unlabeled.cols()));
        const ComposedBatch text(unlabeled, empty, net, encoders, zs_template(config.prompt, config.zs_text_mode));
        const auto c = contrastive_loss_grad(encode_images(unlabeled, encoders), text.features(), config.temperature,
                                             false, true);
        out.losses.l_zscir = c.loss;
        axpy(out.gradient, config.zscir_weight, text.backward(c.grad_b));
    }
    if (config.triplet_weight > 0.0) {
        const auto batch = gather(triplets);
        const ComposedBatch composed(batch.references, batch.texts, net, encoders, config.prompt);
        const auto c = contrastive_loss_grad(composed.features(), encode_images(batch.targets, encoders),
                                             config.temperature, true, false);
        out.losses.l_triplet = c.loss;
        axpy(out.gradient, config.triplet_weight, composed.backward(c.grad_a));
    }
    out.losses.l_hybrid = config.zscir_weight * out.losses.l_zscir + config.triplet_weight * out.losses.l_triplet;
    return out;
}

void adam_update(MappingNetwork& net, AdamState& state, std::span<const double> gradient, const TrainConfig& config) {
    auto params = net.parameters();
    if (gradient.size() != params.size()) throw Error(ErrorCode::DimMismatch, "gradient size");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * gradient[i];
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * gradient[i] * gradient[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
    net.set_parameters(params);
}

LossBreakdown train_step(const Mat& unlabeled, std::span<const TrainingTriplet> triplets, MappingNetwork& net,
                         AdamState& adam, const EncoderBundle& encoders, const TrainConfig& config) {
    auto hg = hybrid_loss_and_gradient(unlabeled, triplets, net, encoders, config);
    adam_update(net, adam, hg.gradient, config);
    return hg.losses;
}

// --- batching -------------------------------------------------------------

BatchStream::BatchStream(std::size_t size, std::size_t batch, std::uint64_t seed)
    : size_(size), batch_(batch), seed_(seed) {}

const std::vector<std::size_t>& BatchStream::permutation(std::uint64_t epoch) const {
    if (epoch != cached_epoch_) {
        cached_perm_.resize(size_);
        std::iota(cached_perm_.begin(), cached_perm_.end(), std::size_t{0});
        std::mt19937_64 rng(derive_seed(seed_, "epoch:" + std::to_string(epoch)));
        std::shuffle(cached_perm_.begin(), cached_perm_.end(), rng);
        cached_epoch_ = epoch;
    }
    return cached_perm_;
}

std::vector<std::size_t> BatchStream::batch_at(std::uint64_t step) const {
    std::vector<std::size_t> out;
    if (size_ == 0) return out;
    out.reserve(batch_);
    const std::uint64_t start = step * batch_;
    for (std::uint64_t p = start; p < start + batch_; ++p) out.push_back(permutation(p / size_)[p % size_]);
    return out;
}

// --- checkpoint -----------------------------------------------------------

void Checkpoint::save(const std::filesystem::path& path) const {
    json j{{"format", kFormat},
           {"version", kVersion},
           {"config_hash", config_hash},
           {"step", step},
           {"prompt", prompt.to_json()},
           {"network", net.to_json()},
           {"optimizer", {{"t", adam.t}, {"m", adam.m}, {"v", adam.v}}}};
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << j.dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MissingInput, "checkpoint not found: " + path.string());
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw Error(ErrorCode::CorruptCheckpoint, "unparseable checkpoint: " + path.string());
    }
    if (j.value("format", "") != kFormat) {
        throw Error(ErrorCode::CorruptCheckpoint, "not a checkpoint file: " + path.string());
    }
    if (j.value("version", -1) != kVersion) {
        throw Error(ErrorCode::VersionMismatch, "checkpoint version " + j.value("version", json(-1)).dump());
    }
    try {
        Checkpoint c;
        c.config_hash = j.at("config_hash").get<std::string>();
        c.step = j.at("step").get<std::uint64_t>();
        c.prompt = PromptTemplate::from_json(j.at("prompt"));
        c.net = MappingNetwork::from_json(j.at("network"));
        const auto& opt = j.at("optimizer");
        c.adam.t = opt.at("t").get<std::uint64_t>();
        c.adam.m = opt.at("m").get<std::vector<double>>();
        c.adam.v = opt.at("v").get<std::vector<double>>();
        const auto n = c.net.parameter_count();
        if ((!c.adam.m.empty() && c.adam.m.size() != n) || c.adam.m.size() != c.adam.v.size()) {
            throw Error(ErrorCode::CorruptCheckpoint, "optimizer state does not match network");
        }
        return c;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::CorruptCheckpoint, e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::CorruptCheckpoint) throw;
        throw Error(ErrorCode::CorruptCheckpoint, e.what());
    }
}

// --- trainer --------------------------------------------------------------

Trainer::Trainer(Mat unlabeled_images, std::vector<TrainingTriplet> triplets, const EncoderBundle& encoders,
                 MappingNetwork init, TrainConfig config)
    : unlabeled_(std::move(unlabeled_images)),
      triplets_(std::move(triplets)),
      encoders_(encoders),
      net_(std::move(init)),
      config_(std::move(config)),
      unlabeled_stream_(static_cast<std::size_t>(unlabeled_.cols()), config_.unlabeled_batch_size,
                        derive_seed(config_.seed, "unlabeled")),
      triplet_stream_(triplets_.size(), config_.triplet_batch_size, derive_seed(config_.seed, "triplets")) {
    config_.validate();
    check_compatible(net_, encoders_);
    if (config_.zscir_weight > 0.0 && unlabeled_.cols() == 0) {
        throw Error(ErrorCode::InvalidArgument, "unlabeled dataset is empty");
    }
    if (config_.triplet_weight > 0.0 && triplets_.empty()) {
        throw Error(ErrorCode::InvalidArgument, "triplet dataset is empty");
    }
    for (std::size_t i = 0; i < triplets_.size(); ++i) {
        if (triplets_[i].status != TripletStatus::Kept) {
            throw Error(ErrorCode::UnfilteredTriplet, "training triplet " + std::to_string(i) + " is not kept");
        }
    }
}

void Trainer::resume(const Checkpoint& checkpoint) {
    if (checkpoint.net.parameter_count() != net_.parameter_count() ||
        checkpoint.net.config().to_json() != net_.config().to_json()) {
        throw Error(ErrorCode::CorruptCheckpoint, "checkpoint network does not match the configured network");
    }
    net_ = checkpoint.net;
    adam_ = checkpoint.adam;
    step_ = checkpoint.step;
}

LossBreakdown Trainer::step() {
    Mat unlabeled;
    if (config_.zscir_weight > 0.0) {
        const auto idx = unlabeled_stream_.batch_at(step_);
        unlabeled.resize(unlabeled_.rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            unlabeled.col(static_cast<Eigen::Index>(i)) = unlabeled_.col(static_cast<Eigen::Index>(idx[i]));
        }
    }
    std::vector<TrainingTriplet> triplets;
    if (config_.triplet_weight > 0.0) {
        for (std::size_t i : triplet_stream_.batch_at(step_)) triplets.push_back(triplets_[i]);
    }
    const auto losses = train_step(unlabeled, triplets, net_, adam_, encoders_, config_);
    ++step_;
    return losses;
}

void Trainer::run(const StepCallback& on_step) {
    while (step_ < config_.steps) {
        const auto losses = step();
        if (on_step) on_step(*this, LossRecord{step_, losses});
    }
}

Checkpoint Trainer::checkpoint(std::string config_hash) const {
    return Checkpoint{net_, adam_, step_, std::move(config_hash), config_.prompt};
}

}  // namespace cirsynth
