#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mapre/encoder.hpp"
#include "mapre/tensor.hpp"

namespace mapre {

// Learnable coefficients weighting the label-agnostic (alpha) and
// label-aware (beta) score terms.
struct FewShotHead {
    Tensor alpha;
    Tensor beta;
};

// Affine map from the 2d context vector u to catalog logits.
struct SupervisedHeadL {
    Tensor weight;  // [2d, catalog]
    Tensor bias;    // [catalog]
};

// Projection from u (2d) down to d so it can be compared with relation
// vectors v.
struct SupervisedHeadR {
    Tensor weight;  // [2d, d]
    Tensor bias;    // [d]
};

// Both encoders plus the fine-tuning heads. The relation encoder has its
// own parameters unless share_encoders is set, in which case it aliases the
// context encoder's tensors.
class MapREModel {
public:
    static MapREModel init(const EncoderConfig& config, bool share_encoders, std::uint64_t seed) {
        MapREModel model;
        model.config_ = config;
        model.share_encoders_ = share_encoders;
        model.seed_ = seed;
        std::mt19937_64 rng(seed);
        model.context_encoder_ = TransformerEncoder::init(config, "con", rng);
        // the relation encoder starts from the same weights, trained apart,
        // the way two copies of one pretrained encoder would be
        model.relation_encoder_ =
            share_encoders ? model.context_encoder_ : model.context_encoder_.clone_as("rel");
        model.fewshot_.alpha = Tensor::param("fewshot.alpha", {1}, {0.95});
        model.fewshot_.beta = Tensor::param("fewshot.beta", {1}, {1.05});
        return model;
    }

    const EncoderConfig& config() const { return config_; }
    bool shared_encoders() const { return share_encoders_; }
    std::uint64_t seed() const { return seed_; }

    TransformerEncoder& context_encoder() { return context_encoder_; }
    const TransformerEncoder& context_encoder() const { return context_encoder_; }
    TransformerEncoder& relation_encoder() { return relation_encoder_; }
    const TransformerEncoder& relation_encoder() const { return relation_encoder_; }

    FewShotHead& fewshot() { return fewshot_; }
    const FewShotHead& fewshot() const { return fewshot_; }

    bool has_head_l() const { return head_l_.has_value(); }
    bool has_head_r() const { return head_r_.has_value(); }
    SupervisedHeadL& head_l() { return require(head_l_, "L"); }
    SupervisedHeadR& head_r() { return require(head_r_, "R"); }

    void ensure_head_l(std::size_t catalog_size) {
        if (catalog_size == 0) throw std::runtime_error("head L: empty relation catalog");
        if (head_l_) {
            if (head_l_->bias.size() != catalog_size) {
                throw std::runtime_error("head L: catalog size changed from " +
                                         std::to_string(head_l_->bias.size()) + " to " +
                                         std::to_string(catalog_size));
            }
            return;
        }
        std::mt19937_64 rng(seed_ ^ 0x5ead01u);
        SupervisedHeadL head;
        head.weight = random_normal({2 * config_.model_dim, catalog_size}, rng, 0.02);
        head.weight.set_requires_grad(true);
        head.weight.set_name("head_l.weight");
        head.bias = Tensor::param("head_l.bias", {catalog_size}, std::vector<double>(catalog_size, 0.0));
        head_l_ = std::move(head);
    }

    void ensure_head_r() {
        if (head_r_) return;
        std::mt19937_64 rng(seed_ ^ 0x5ead02u);
        SupervisedHeadR head;
        head.weight = random_normal({2 * config_.model_dim, config_.model_dim}, rng, 0.02);
        head.weight.set_requires_grad(true);
        head.weight.set_name("head_r.weight");
        head.bias = Tensor::param("head_r.bias", {config_.model_dim},
                                  std::vector<double>(config_.model_dim, 0.0));
        head_r_ = std::move(head);
    }

    // Deterministic parameter order: context encoder, relation encoder
    // (when separate), coefficients, then heads.
    std::vector<NamedParam> parameters() {
        std::vector<NamedParam> params;
        auto collect = [&params](Tensor& t, bool no_decay) { params.push_back({t.name(), t, no_decay}); };
        context_encoder_.visit_params(collect);
        if (!share_encoders_) relation_encoder_.visit_params(collect);
        params.push_back({"fewshot.alpha", fewshot_.alpha, true});
        params.push_back({"fewshot.beta", fewshot_.beta, true});
        if (head_l_) {
            params.push_back({"head_l.weight", head_l_->weight, false});
            params.push_back({"head_l.bias", head_l_->bias, true});
        }
        if (head_r_) {
            params.push_back({"head_r.weight", head_r_->weight, false});
            params.push_back({"head_r.bias", head_r_->bias, true});
        }
        return params;
    }

private:
    template <typename T>
    static T& require(std::optional<T>& head, const char* which) {
        if (!head) throw std::runtime_error(std::string("supervised head ") + which + " not initialized");
        return *head;
    }

    EncoderConfig config_;
    bool share_encoders_ = false;
    std::uint64_t seed_ = 0;
    TransformerEncoder context_encoder_;
    TransformerEncoder relation_encoder_;
    FewShotHead fewshot_;
    std::optional<SupervisedHeadL> head_l_;
    std::optional<SupervisedHeadR> head_r_;
};

}  // namespace mapre
