#pragma once

#include <cstdint>
#include <filesystem>

#include "hv/trainer.hpp"

namespace hv {

// Heterogeneous-identity generator. Each identity is a latent unit vector;
// the ID and selfie views of a subject are two fixed linear transforms of the
// same latent plus additive Gaussian noise, normalized to unit length. The
// source-domain generator uses the average of the two transforms.
struct SynthConfig {
    std::size_t num_subjects = 0; // pair dataset
    std::size_t latent_dim = 0;
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;       // source dataset
    std::size_t samples_per_class = 1; // source dataset
    Matrix id_domain_transform;        // input_dim x latent_dim
    Matrix selfie_domain_transform;    // input_dim x latent_dim
    double noise_sigma_source = 0.0;
    double noise_sigma_id = 0.0;
    double noise_sigma_selfie = 0.0;
    std::size_t selfies_min = 1;
    std::size_t selfies_max = 1;
    std::uint64_t rng_seed = 0;
};

Vector random_unit_vector(std::size_t dim, Rng& rng);

// rows x cols with orthonormal columns (Gram-Schmidt on Gaussian draws).
Matrix random_orthonormal_columns(std::size_t rows, std::size_t cols, Rng& rng);

// rows x cols identity embedding (1 on the diagonal).
Matrix identity_transform(std::size_t rows, std::size_t cols);

// Orthonormalized (1-alpha)*a + alpha*b; a partial domain shift.
Matrix blend_transforms(const Matrix& a, const Matrix& b, double alpha);

// Per class: a latent on the unit sphere; samples are
// normalize(mix_transform * latent + noise) labeled by class.
LabeledDataset gen_source_dataset(const SynthConfig& config);

// Per subject: one ID input through the ID transform and selfies_min..max
// selfie inputs through the selfie transform, all sharing one latent. Subject
// latents come from a stream disjoint from the source-domain class latents.
PairDataset gen_pair_dataset(const SynthConfig& config);

// Dataset files: magic "HVDATA", format version, kind byte, counts, inputs as
// little-endian float64, trailing FNV-1a 64 checksum. Round-trips bitwise.
void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& path);
void save_dataset(const PairDataset& dataset, const std::filesystem::path& path);
LabeledDataset load_labeled_dataset(const std::filesystem::path& path);
PairDataset load_pair_dataset(const std::filesystem::path& path);

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

} // namespace hv
