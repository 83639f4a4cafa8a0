#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fuseqa/fusion.hpp"
#include "fuseqa/rng.hpp"
#include "fuseqa/sarprep.hpp"
#include "fuseqa/taxonomy.hpp"

namespace fuseqa {

enum class Modality { Sar = 0, Optical = 1 };

// Parameters of the synthetic label/feature generator. Each class gets an
// orthonormal direction per modality; a sample's features are the sum of
// the directions of its set classes, scaled by the per-class detectability
// in that modality, plus isotropic gaussian noise. The test split can be
// translated along a seed-derived direction to emulate a spatially
// disjoint split.
struct SynthConfig {
    Nomenclature nom;
    int n_samples = 1000;
    std::uint64_t seed = 0;
    std::vector<double> class_freqs;   // Bernoulli rate per class, pre-closure
    std::vector<double> detect_sar;    // separability per class, 0..1
    std::vector<double> detect_opt;
    int feature_dim_sar = 0;  // 0 -> number of classes
    int feature_dim_opt = 0;
    double noise_sigma = 0.5;
    double domain_shift = 0.0;  // applied to test-split feature means
    std::array<double, 3> split_fractions{0.6, 0.2, 0.2};

    // raster generator controls
    int volume_class = 0;               // class whose bit drives VV-VH variance
    double volume_variance_factor = 4.0;

    int dim(Modality m) const {
        const int d = m == Modality::Sar ? feature_dim_sar : feature_dim_opt;
        return d > 0 ? d : static_cast<int>(nom.size());
    }
};

struct SplitData {
    std::vector<FeatureVector> sar, opt;
    std::vector<LabelSet> labels;
    std::size_t size() const { return labels.size(); }
};

struct SynthDataset {
    SplitData train, val, test;
    SynthConfig config;
};

namespace detail {

inline void validate_synth_config(const SynthConfig& cfg) {
    const std::size_t n = cfg.nom.size();
    if (n == 0) throw std::invalid_argument("synth: empty nomenclature");
    if (cfg.n_samples < 1) throw std::invalid_argument("synth: n_samples must be positive");
    if (cfg.class_freqs.size() != n || cfg.detect_sar.size() != n || cfg.detect_opt.size() != n)
        throw std::invalid_argument("synth: per-class vectors must match the nomenclature size");
    for (double f : cfg.class_freqs)
        if (!(f > 0.0 && f < 1.0)) throw std::invalid_argument("synth: class frequencies must lie in (0,1)");
    for (const auto* d : {&cfg.detect_sar, &cfg.detect_opt})
        for (double v : *d)
            if (v < 0.0 || v > 1.0) throw std::invalid_argument("synth: detectability must lie in [0,1]");
    if (cfg.noise_sigma <= 0.0) throw std::invalid_argument("synth: noise_sigma must be positive");
    if (cfg.domain_shift < 0.0) throw std::invalid_argument("synth: domain_shift must be >= 0");
    double fsum = 0.0;
    for (double f : cfg.split_fractions) {
        if (f <= 0.0) throw std::invalid_argument("synth: split fractions must be positive");
        fsum += f;
    }
    if (std::abs(fsum - 1.0) > 1e-9) throw std::invalid_argument("synth: split fractions must sum to 1");
    for (Modality m : {Modality::Sar, Modality::Optical})
        if (cfg.dim(m) < static_cast<int>(n))
            throw std::invalid_argument("synth: feature dimension smaller than the class count");
}

// N orthonormal d-dim directions via Gram-Schmidt on seeded gaussian
// vectors; re-orthogonalized once for 1e-9-level orthogonality.
inline std::vector<std::vector<double>> class_directions(std::size_t n, int dim, std::uint64_t stream_seed) {
    Rng rng(stream_seed);
    std::vector<std::vector<double>> dirs;
    dirs.reserve(n);
    while (dirs.size() < n) {
        std::vector<double> v(static_cast<std::size_t>(dim));
        for (double& x : v) x = rng.normal();
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& u : dirs) {
                double dot = 0.0;
                for (std::size_t k = 0; k < v.size(); ++k) dot += v[k] * u[k];
                for (std::size_t k = 0; k < v.size(); ++k) v[k] -= dot * u[k];
            }
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-8) continue;  // essentially never; redraw
        for (double& x : v) x /= norm;
        dirs.push_back(std::move(v));
    }
    return dirs;
}

inline std::vector<double> unit_direction(int dim, std::uint64_t stream_seed) {
    Rng rng(stream_seed);
    std::vector<double> v(static_cast<std::size_t>(dim));
    double norm = 0.0;
    do {
        for (double& x : v) x = rng.normal();
        norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
    } while (norm < 1e-8);
    for (double& x : v) x /= norm;
    return v;
}

}  // namespace detail

// Seeded dataset generation. Sample i depends only on (seed, i); the split
// is by index with sizes matching the fractions to within one sample.
inline SynthDataset gen_dataset(const SynthConfig& cfg) {
    detail::validate_synth_config(cfg);
    const std::size_t n_classes = cfg.nom.size();
    const int d_sar = cfg.dim(Modality::Sar), d_opt = cfg.dim(Modality::Optical);

    const auto dirs_sar = detail::class_directions(
        n_classes, d_sar, derive_seed(cfg.seed, {kStreamDirections, static_cast<std::uint64_t>(Modality::Sar)}));
    const auto dirs_opt = detail::class_directions(
        n_classes, d_opt, derive_seed(cfg.seed, {kStreamDirections, static_cast<std::uint64_t>(Modality::Optical)}));
    const auto shift_sar =
        detail::unit_direction(d_sar, derive_seed(cfg.seed, {kStreamShift, static_cast<std::uint64_t>(Modality::Sar)}));
    const auto shift_opt = detail::unit_direction(
        d_opt, derive_seed(cfg.seed, {kStreamShift, static_cast<std::uint64_t>(Modality::Optical)}));

    const auto n_total = static_cast<std::size_t>(cfg.n_samples);
    const auto n_train = static_cast<std::size_t>(std::llround(cfg.split_fractions[0] * cfg.n_samples));
    const auto n_val = static_cast<std::size_t>(std::llround(cfg.split_fractions[1] * cfg.n_samples));

    SynthDataset ds;
    ds.config = cfg;
    for (std::size_t i = 0; i < n_total; ++i) {
        Rng rng(derive_seed(cfg.seed, {kStreamSample, i}));
        LabelSet bits(n_classes);
        for (std::size_t j = 0; j < n_classes; ++j) bits.set(j, rng.bernoulli(cfg.class_freqs[j]));
        const LabelSet labels = hierarchy_closure(bits, cfg.nom);

        const bool in_test = i >= n_train + n_val;
        auto make_features = [&](const std::vector<std::vector<double>>& dirs, std::span<const double> detect,
                                 const std::vector<double>& shift, int dim) {
            FeatureVector x(static_cast<std::size_t>(dim), 0.0);
            for (std::size_t j = 0; j < n_classes; ++j) {
                if (!labels.test(j)) continue;
                for (int k = 0; k < dim; ++k) x[static_cast<std::size_t>(k)] += detect[j] * dirs[j][static_cast<std::size_t>(k)];
            }
            for (int k = 0; k < dim; ++k) x[static_cast<std::size_t>(k)] += cfg.noise_sigma * rng.normal();
            if (in_test && cfg.domain_shift > 0.0)
                for (int k = 0; k < dim; ++k) x[static_cast<std::size_t>(k)] += cfg.domain_shift * shift[static_cast<std::size_t>(k)];
            return x;
        };
        FeatureVector f_sar = make_features(dirs_sar, cfg.detect_sar, shift_sar, d_sar);
        FeatureVector f_opt = make_features(dirs_opt, cfg.detect_opt, shift_opt, d_opt);

        SplitData& split = i < n_train ? ds.train : (i < n_train + n_val ? ds.val : ds.test);
        split.sar.push_back(std::move(f_sar));
        split.opt.push_back(std::move(f_opt));
        split.labels.push_back(labels);
    }
    return ds;
}

// Synthetic VV/VH pair. Writing VV = m + a + b and VH = m' + a - b with
// independent gaussians a, b keeps each channel's marginal variance fixed
// while Var(VV-VH) = 4*Var(b) tracks the volume-scatter bit. Non-volume
// bits move the channel means instead, so they stay visible to per-channel
// summaries.
inline std::pair<Raster, Raster> gen_sar_pair(const LabelSet& labels, const SynthConfig& cfg, int size,
                                              std::int64_t sample_index = 0) {
    if (size < 8) throw std::invalid_argument("gen_sar_pair: size must be >= 8");
    const std::size_t n_classes = cfg.nom.size();
    if (labels.size() != n_classes) throw std::invalid_argument("gen_sar_pair: label length mismatch");
    if (cfg.volume_class < 0 || cfg.volume_class >= static_cast<int>(n_classes))
        throw std::invalid_argument("gen_sar_pair: volume_class out of range");
    if (cfg.volume_variance_factor < 1.0 || cfg.volume_variance_factor > 8.0)
        throw std::invalid_argument("gen_sar_pair: volume_variance_factor must lie in [1, 8]");

    // per-class mean offsets in dB, fixed by the config seed
    Rng mean_rng(derive_seed(cfg.seed, {kStreamSarClassMeans}));
    double mean_vv = -8.0, mean_vh = -14.0;
    for (std::size_t j = 0; j < n_classes; ++j) {
        const double dv = mean_rng.uniform(0.8, 2.0) * (mean_rng.bernoulli(0.5) ? 1.0 : -1.0);
        const double dh = mean_rng.uniform(0.8, 2.0) * (mean_rng.bernoulli(0.5) ? 1.0 : -1.0);
        if (static_cast<int>(j) == cfg.volume_class || !labels.test(j)) continue;
        mean_vv += dv;
        mean_vh += dh;
    }

    const double total_var = 4.0;  // per-channel pixel variance, dB^2
    const double base_share = 1.0 / 8.0;
    const double share = labels.test(static_cast<std::size_t>(cfg.volume_class))
                             ? base_share * cfg.volume_variance_factor
                             : base_share;
    const double sigma_b = std::sqrt(total_var * share);
    const double sigma_a = std::sqrt(total_var * (1.0 - share));

    Rng rng(derive_seed(cfg.seed, {kStreamSarPair, static_cast<std::uint64_t>(sample_index)}));
    Raster vv = Raster::make(size, size, 1, "dB");
    Raster vh = Raster::make(size, size, 1, "dB");
    for (std::size_t i = 0; i < vv.data.size(); ++i) {
        const double a = sigma_a * rng.normal();
        const double b = sigma_b * rng.normal();
        vv.data[i] = static_cast<float>(mean_vv + a + b);
        vh.data[i] = static_cast<float>(mean_vh + a - b);
    }
    return {std::move(vv), std::move(vh)};
}

// Detectability preset with three class groups: SAR-favored, optical-favored
// but SAR-informative, and optical-only. Group assignment cycles by index.
inline SynthConfig complementary_preset(const Nomenclature& nom) {
    if (nom.size() < 6) throw std::invalid_argument("complementary_preset: need at least 6 classes");
    SynthConfig cfg;
    cfg.nom = nom;
    cfg.n_samples = 5000;
    cfg.class_freqs.assign(nom.size(), 0.3);
    cfg.detect_sar.resize(nom.size());
    cfg.detect_opt.resize(nom.size());
    for (std::size_t j = 0; j < nom.size(); ++j) {
        switch (j % 3) {
            case 0:  // SAR-favored (water-like)
                cfg.detect_sar[j] = 0.9;
                cfg.detect_opt[j] = 0.3;
                break;
            case 1:  // optical-favored, SAR still informative
                cfg.detect_sar[j] = 0.5;
                cfg.detect_opt[j] = 0.9;
                break;
            default:  // optical-only
                cfg.detect_sar[j] = 0.05;
                cfg.detect_opt[j] = 0.9;
                break;
        }
    }
    return cfg;
}

}  // namespace fuseqa
