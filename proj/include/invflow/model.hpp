#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "invflow/coupling.hpp"
#include "invflow/layers.hpp"
#include "invflow/tensor.hpp"

namespace invflow {

enum class CouplingKind : std::uint8_t { Affine, Quad };
/// Channel-mixing layer used in each flow step.
enum class MixerKind : std::uint8_t { InvConv, Conv1x1 };

std::string to_string(CouplingKind k);
std::string to_string(MixerKind k);
CouplingKind parse_coupling(const std::string& s);
MixerKind parse_mixer(const std::string& s);

struct ModelConfig {
    int height = 8;
    int width = 8;
    int channels = 1;
    int levels = 2;
    int depth = 4;
    int hidden = 64;       // coupling network width
    int kernel_size = 3;   // invertible convolution window
    CouplingKind coupling = CouplingKind::Quad;
    MixerKind mixer = MixerKind::InvConv;
    Real scale_bound = 2;  // |g| <= scale_bound in every coupling
    bool squeeze = true;   // squeeze at the start of every level

    Shape input_shape() const { return {height, width, channels}; }
    /// Throws std::invalid_argument when the shapes do not work out.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

/// Multi-scale normalizing flow. Level l applies
///   squeeze -> depth x (actnorm -> mixer -> coupling) -> split
/// where the split (absent on the last level) factors half of the channels
/// out under a learned conditional Gaussian; the final latent is standard
/// normal.
class FlowModel {
public:
    struct Level {
        Shape input;   // shape entering the level, before squeeze
        Shape inner;   // shape seen by the flow steps
        std::vector<std::unique_ptr<FlowLayer>> steps;
        std::optional<SplitPrior> split;
    };

    FlowModel(const ModelConfig& config, std::uint64_t seed);
    FlowModel(const FlowModel& other);
    FlowModel& operator=(const FlowModel& other);
    FlowModel(FlowModel&&) noexcept = default;
    FlowModel& operator=(FlowModel&&) noexcept = default;

    const ModelConfig& config() const { return config_; }
    std::vector<Level>& levels() { return levels_; }
    const std::vector<Level>& levels() const { return levels_; }

    struct Encoding {
        std::vector<Tensor> latents;  // split outputs in level order, then the final latent
        Real logp = 0;                // log p(x)
        Real logdet = 0;              // sum of layer log-determinants
        Real prior_logp = 0;          // log-density of the latents under their priors
    };
    Encoding encode(const Tensor& x) const;
    Real log_prob(const Tensor& x) const { return encode(x).logp; }
    /// Inverse of encode.
    Tensor decode(const std::vector<Tensor>& latents) const;
    std::vector<Shape> latent_shapes() const;

    /// Draws the final latent from N(0, T^2 I) and every split latent from its
    /// conditional prior with the same temperature, then inverts the flow.
    Tensor sample(std::mt19937_64& rng, Real temperature = 1) const;
    /// n samples as a rank-4 tensor.
    Tensor sample_batch(int n, std::mt19937_64& rng, Real temperature = 1) const;

    /// Adds d(-log p(x))/dparams into grad (length parameter_count()) and
    /// returns -log p(x).
    Real accumulate_gradient(const Tensor& x, std::span<Real> grad) const;

    /// Data-dependent actnorm initialization, level by level.
    void data_init(const std::vector<Tensor>& batch);
    /// Every layer becomes the identity map: actnorm scale 1 and bias 0,
    /// convolution kernels equal to the identity, couplings and split priors
    /// with all parameters zero. Actnorm initialization flags are untouched.
    void make_identity();
    /// Accepts the identity actnorm parameters as initialized.
    void initialize_identity_actnorm();
    bool initialized() const;

    std::size_t parameter_count() const;
    std::vector<Real> get_parameters() const;
    void set_parameters(std::span<const Real> params);
    /// Moves every layer away from its identity initialization.
    void randomize(std::mt19937_64& rng, Real scale);

    /// Smallest |D[c,c]| over all invertible convolutions (inf if none).
    Real min_invconv_diagonal() const;

private:
    ModelConfig config_;
    std::vector<Level> levels_;
};

/// (-log p + dims * ln 256) / (dims * ln 2) for data dequantized to [0, 1).
Real bits_per_dim(Real logp, std::size_t dims);

}  // namespace invflow
