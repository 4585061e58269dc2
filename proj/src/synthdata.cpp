#include "hv/synthdata.hpp"

#include <cmath>

#include "hv/binio.hpp"

namespace hv {

namespace {

// RNG stream tags; class and subject latents must stay disjoint.
constexpr std::uint64_t kClassLatentStream = 1;
constexpr std::uint64_t kSourceNoiseStream = 2;
constexpr std::uint64_t kSubjectLatentStream = 3;
constexpr std::uint64_t kPairNoiseStream = 4;

void validate_synth_config(const SynthConfig& config) {
    if (config.latent_dim == 0 || config.input_dim == 0)
        throw ConfigInvalid("SynthConfig: zero dimension");
    const auto check_transform = [&](const Matrix& t, const char* name) {
        if (t.rows != config.input_dim || t.cols != config.latent_dim)
            throw ConfigInvalid(std::string("SynthConfig: ") + name +
                                " must be input_dim x latent_dim");
        if (!all_finite(t))
            throw ConfigInvalid(std::string("SynthConfig: ") + name + " not finite");
    };
    check_transform(config.id_domain_transform, "id_domain_transform");
    check_transform(config.selfie_domain_transform, "selfie_domain_transform");
    for (double sigma : {config.noise_sigma_source, config.noise_sigma_id,
                         config.noise_sigma_selfie})
        if (!(sigma >= 0.0) || !std::isfinite(sigma))
            throw ConfigInvalid("SynthConfig: noise sigma must be finite and >= 0");
    if (config.selfies_min == 0 || config.selfies_min > config.selfies_max)
        throw ConfigInvalid("SynthConfig: bad selfies_per_subject range");
}

Vector transform_latent(const Matrix& t, const Vector& latent, double sigma, Rng& rng) {
    Vector x(t.rows, 0.0);
    for (std::size_t i = 0; i < t.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < t.cols; ++j) s += t.at(i, j) * latent[j];
        x[i] = s;
    }
    if (sigma > 0.0)
        for (double& v : x) v += sigma * rng.gaussian();
    const double n = l2_norm(x);
    if (n <= kDegenerateNormThreshold)
        throw DegenerateNorm("synthdata: generated input has zero norm");
    for (double& v : x) v /= n;
    return x;
}

} // namespace

Vector random_unit_vector(std::size_t dim, Rng& rng) {
    if (dim == 0) throw InvalidArgument("random_unit_vector: zero dim");
    Vector v(dim);
    double n = 0.0;
    do {
        for (double& x : v) x = rng.gaussian();
        n = l2_norm(v);
    } while (n <= kDegenerateNormThreshold);
    for (double& x : v) x /= n;
    return v;
}

Matrix random_orthonormal_columns(std::size_t rows, std::size_t cols, Rng& rng) {
    if (cols > rows)
        throw InvalidArgument("random_orthonormal_columns: cols > rows");
    Matrix m(rows, cols);
    for (std::size_t c = 0; c < cols; ++c) {
        Vector v(rows);
        double n = 0.0;
        do {
            for (double& x : v) x = rng.gaussian();
            // Remove the projections onto previous columns.
            for (std::size_t p = 0; p < c; ++p) {
                double proj = 0.0;
                for (std::size_t r = 0; r < rows; ++r) proj += v[r] * m.at(r, p);
                for (std::size_t r = 0; r < rows; ++r) v[r] -= proj * m.at(r, p);
            }
            n = l2_norm(v);
        } while (n <= 1e-8);
        for (std::size_t r = 0; r < rows; ++r) m.at(r, c) = v[r] / n;
    }
    return m;
}

Matrix identity_transform(std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < std::min(rows, cols); ++i) m.at(i, i) = 1.0;
    return m;
}

Matrix blend_transforms(const Matrix& a, const Matrix& b, double alpha) {
    if (!a.same_shape(b)) throw ShapeMismatch("blend_transforms: shape mismatch");
    Matrix mixed(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i)
        mixed.data[i] = (1.0 - alpha) * a.data[i] + alpha * b.data[i];
    // Re-orthonormalize the columns.
    Matrix out(a.rows, a.cols);
    for (std::size_t c = 0; c < a.cols; ++c) {
        Vector v(a.rows);
        for (std::size_t r = 0; r < a.rows; ++r) v[r] = mixed.at(r, c);
        for (std::size_t p = 0; p < c; ++p) {
            double proj = 0.0;
            for (std::size_t r = 0; r < a.rows; ++r) proj += v[r] * out.at(r, p);
            for (std::size_t r = 0; r < a.rows; ++r) v[r] -= proj * out.at(r, p);
        }
        const double n = l2_norm(v);
        if (n <= 1e-10) throw DegenerateNorm("blend_transforms: collapsed column");
        for (std::size_t r = 0; r < a.rows; ++r) out.at(r, c) = v[r] / n;
    }
    return out;
}

LabeledDataset gen_source_dataset(const SynthConfig& config) {
    validate_synth_config(config);
    if (config.num_classes < 2)
        throw ConfigInvalid("gen_source_dataset: num_classes must be >= 2");
    if (config.samples_per_class == 0)
        throw ConfigInvalid("gen_source_dataset: samples_per_class must be positive");

    Matrix mix(config.input_dim, config.latent_dim);
    for (std::size_t i = 0; i < mix.data.size(); ++i)
        mix.data[i] = 0.5 * (config.id_domain_transform.data[i] +
                             config.selfie_domain_transform.data[i]);

    Rng base(config.rng_seed);
    Rng latent_rng = base.child(kClassLatentStream);
    Rng noise_rng = base.child(kSourceNoiseStream);

    LabeledDataset dataset;
    dataset.num_classes = config.num_classes;
    dataset.samples.reserve(config.num_classes * config.samples_per_class);
    for (std::size_t c = 0; c < config.num_classes; ++c) {
        const Vector latent = random_unit_vector(config.latent_dim, latent_rng);
        for (std::size_t s = 0; s < config.samples_per_class; ++s)
            dataset.samples.push_back(LabeledSample{
                transform_latent(mix, latent, config.noise_sigma_source, noise_rng), c});
    }
    return dataset;
}

PairDataset gen_pair_dataset(const SynthConfig& config) {
    validate_synth_config(config);
    if (config.num_subjects < 2)
        throw ConfigInvalid("gen_pair_dataset: num_subjects must be >= 2");

    Rng base(config.rng_seed);
    Rng latent_rng = base.child(kSubjectLatentStream);
    Rng noise_rng = base.child(kPairNoiseStream);

    PairDataset dataset;
    dataset.pairs.reserve(config.num_subjects);
    for (std::size_t i = 0; i < config.num_subjects; ++i) {
        const Vector latent = random_unit_vector(config.latent_dim, latent_rng);
        PairSubject subject;
        subject.subject_id = i;
        subject.id_input = transform_latent(config.id_domain_transform, latent,
                                            config.noise_sigma_id, noise_rng);
        const std::size_t count =
            config.selfies_min +
            (config.selfies_max > config.selfies_min
                 ? noise_rng.uniform_index(config.selfies_max - config.selfies_min + 1)
                 : 0);
        subject.selfie_inputs.reserve(count);
        for (std::size_t s = 0; s < count; ++s)
            subject.selfie_inputs.push_back(
                transform_latent(config.selfie_domain_transform, latent,
                                 config.noise_sigma_selfie, noise_rng));
        dataset.pairs.push_back(std::move(subject));
    }
    return dataset;
}

namespace {

constexpr std::uint8_t kKindLabeled = 0;
constexpr std::uint8_t kKindPair = 1;

ByteWriter dataset_header(std::uint8_t kind) {
    ByteWriter w;
    w.put_magic("HVDATA");
    w.put_u32(kDatasetFormatVersion);
    w.put_u8(kind);
    w.mark_checksum_start();
    return w;
}

ByteReader open_dataset(const std::filesystem::path& path, std::uint8_t expected_kind) {
    ByteReader r(read_file_bytes(path));
    r.expect_magic("HVDATA");
    const std::uint32_t version = r.get_u32();
    if (version != kDatasetFormatVersion)
        throw FormatVersionMismatch("dataset version " + std::to_string(version));
    const std::uint8_t kind = r.get_u8();
    if (kind != expected_kind)
        throw FormatVersionMismatch("dataset kind mismatch");
    r.mark_checksum_start();
    return r;
}

void finish_dataset(ByteWriter& w, const std::filesystem::path& path) {
    const std::uint64_t checksum = w.checksum();
    w.put_u64(checksum);
    atomic_write_file(path, w.bytes());
}

void verify_checksum(ByteReader& r) {
    const std::uint64_t expected = r.checksum_so_far();
    const std::uint64_t stored = r.get_u64();
    if (stored != expected) throw ChecksumMismatch("dataset: payload checksum mismatch");
}

} // namespace

void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& path) {
    ByteWriter w = dataset_header(kKindLabeled);
    w.put_u64(dataset.num_classes);
    w.put_u64(dataset.samples.size());
    w.put_u64(dataset.samples.empty() ? 0 : dataset.samples.front().input.size());
    for (const LabeledSample& s : dataset.samples) {
        w.put_u64(s.label);
        for (double x : s.input) w.put_f64(x);
    }
    finish_dataset(w, path);
}

void save_dataset(const PairDataset& dataset, const std::filesystem::path& path) {
    ByteWriter w = dataset_header(kKindPair);
    w.put_u64(dataset.pairs.size());
    std::size_t input_len = 0;
    if (!dataset.pairs.empty()) input_len = dataset.pairs.front().id_input.size();
    w.put_u64(input_len);
    for (const PairSubject& p : dataset.pairs) {
        w.put_u64(p.subject_id);
        w.put_u64(p.selfie_inputs.size());
        for (double x : p.id_input) w.put_f64(x);
        for (const Vector& s : p.selfie_inputs)
            for (double x : s) w.put_f64(x);
    }
    finish_dataset(w, path);
}

namespace {

// A count that implies more bytes than the file holds means corruption;
// reject it before any allocation sized from it.
void check_plausible(const ByteReader& r, std::uint64_t count) {
    if (count > r.remaining())
        throw ChecksumMismatch("dataset: count exceeds file size");
}

} // namespace

LabeledDataset load_labeled_dataset(const std::filesystem::path& path) {
    ByteReader r = open_dataset(path, kKindLabeled);
    LabeledDataset dataset;
    dataset.num_classes = r.get_u64();
    const std::uint64_t count = r.get_u64();
    const std::uint64_t input_len = r.get_u64();
    check_plausible(r, count);
    check_plausible(r, input_len);
    dataset.samples.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        LabeledSample s;
        s.label = r.get_u64();
        s.input.resize(input_len);
        for (double& x : s.input) x = r.get_f64();
        dataset.samples.push_back(std::move(s));
    }
    verify_checksum(r);
    return dataset;
}

PairDataset load_pair_dataset(const std::filesystem::path& path) {
    ByteReader r = open_dataset(path, kKindPair);
    PairDataset dataset;
    const std::uint64_t count = r.get_u64();
    const std::uint64_t input_len = r.get_u64();
    check_plausible(r, count);
    check_plausible(r, input_len);
    dataset.pairs.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        PairSubject p;
        p.subject_id = r.get_u64();
        const std::uint64_t selfies = r.get_u64();
        check_plausible(r, selfies);
        p.id_input.resize(input_len);
        for (double& x : p.id_input) x = r.get_f64();
        p.selfie_inputs.assign(selfies, Vector(input_len));
        for (Vector& s : p.selfie_inputs)
            for (double& x : s) x = r.get_f64();
        dataset.pairs.push_back(std::move(p));
    }
    verify_checksum(r);
    return dataset;
}

} // namespace hv
