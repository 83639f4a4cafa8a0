#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace fuseqa {

// Planar raster: data holds `channels` planes of width*height floats, each
// plane row-major. Raw SAR channels are in dB; normalized rasters are
// unitless in [0,1].
struct Raster {
    int width = 0, height = 0, channels = 0;
    std::string units = "dB";
    std::vector<float> data;

    std::size_t plane_size() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }

    float at(int c, int y, int x) const {
        return data[static_cast<std::size_t>(c) * plane_size() + static_cast<std::size_t>(y) * width + x];
    }
    float& at(int c, int y, int x) {
        return data[static_cast<std::size_t>(c) * plane_size() + static_cast<std::size_t>(y) * width + x];
    }

    static Raster make(int width, int height, int channels, std::string units = "dB") {
        Raster r;
        r.width = width;
        r.height = height;
        r.channels = channels;
        r.units = std::move(units);
        r.data.assign(static_cast<std::size_t>(width) * height * channels, 0.0f);
        return r;
    }

    static Raster constant(int width, int height, float value, std::string units = "dB") {
        Raster r = make(width, height, 1, std::move(units));
        std::fill(r.data.begin(), r.data.end(), value);
        return r;
    }
};

struct SaturationBounds {
    struct Range {
        double lo = 0.0, hi = 1.0;
    };
    std::vector<Range> channel;
};

namespace detail {
inline constexpr int kSaturationBins = 4096;
}

// Per-channel (lower_q, upper_q) quantiles of the pixel distribution pooled
// over all images, nearest-rank via a fixed 4096-bin cumulative histogram
// between the global min and max. Quantization error is bounded by one bin
// width.
inline SaturationBounds compute_saturation_bounds(std::span<const Raster> images, double lower_q, double upper_q) {
    if (images.empty()) throw std::invalid_argument("compute_saturation_bounds: empty image stream");
    if (!(0.0 <= lower_q && lower_q < upper_q && upper_q <= 1.0))
        throw std::invalid_argument("compute_saturation_bounds: need 0 <= lower_q < upper_q <= 1");
    const int channels = images.front().channels;
    for (const Raster& r : images)
        if (r.channels != channels)
            throw std::invalid_argument("compute_saturation_bounds: inconsistent channel counts");

    SaturationBounds bounds;
    bounds.channel.resize(channels);
    for (int c = 0; c < channels; ++c) {
        double mn = std::numeric_limits<double>::infinity();
        double mx = -std::numeric_limits<double>::infinity();
        std::size_t n = 0;
        for (const Raster& r : images) {
            const std::size_t plane = r.plane_size();
            const float* p = r.data.data() + static_cast<std::size_t>(c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double v = p[i];
                if (!std::isfinite(v)) throw std::invalid_argument("compute_saturation_bounds: non-finite pixel");
                mn = std::min(mn, v);
                mx = std::max(mx, v);
                ++n;
            }
        }
        if (n == 0) throw std::invalid_argument("compute_saturation_bounds: channel has no pixels");

        double lo, hi;
        if (mx == mn) {
            lo = hi = mn;
        } else {
            const double bin_width = (mx - mn) / detail::kSaturationBins;
            std::vector<std::size_t> hist(detail::kSaturationBins, 0);
            for (const Raster& r : images) {
                const std::size_t plane = r.plane_size();
                const float* p = r.data.data() + static_cast<std::size_t>(c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    int b = static_cast<int>((static_cast<double>(p[i]) - mn) / bin_width);
                    b = std::clamp(b, 0, detail::kSaturationBins - 1);
                    ++hist[static_cast<std::size_t>(b)];
                }
            }
            auto rank = [n](double q) {
                const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
                return std::max<std::size_t>(k, 1);
            };
            auto bin_for_rank = [&](std::size_t k) {
                std::size_t cum = 0;
                for (int b = 0; b < detail::kSaturationBins; ++b) {
                    cum += hist[static_cast<std::size_t>(b)];
                    if (cum >= k) return b;
                }
                return detail::kSaturationBins - 1;
            };
            // lower bound reports its bin's lower edge, upper bound the upper
            // edge, so q = (0, 1) recovers (min, max) exactly
            lo = mn + bin_for_rank(rank(lower_q)) * bin_width;
            hi = mn + (bin_for_rank(rank(upper_q)) + 1) * bin_width;
        }
        if (lo == hi) hi = lo + 1e-6;
        bounds.channel[c] = {lo, hi};
    }
    return bounds;
}

// Clip to [lo, hi] per channel, then map affinely onto [0, 1].
inline Raster normalize_channel(const Raster& r, const SaturationBounds& b) {
    if (static_cast<int>(b.channel.size()) != r.channels)
        throw std::invalid_argument("normalize_channel: bounds/channel count mismatch");
    Raster out = r;
    out.units = "unitless";
    const std::size_t plane = r.plane_size();
    for (int c = 0; c < r.channels; ++c) {
        const double lo = b.channel[c].lo, hi = b.channel[c].hi;
        const double scale = 1.0 / (hi - lo);
        float* p = out.data.data() + static_cast<std::size_t>(c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            const double v = std::clamp(static_cast<double>(p[i]), lo, hi);
            p[i] = static_cast<float>((v - lo) * scale);
        }
    }
    return out;
}

// VV - VH in dB (a ratio in linear scale).
inline Raster make_ratio_channel(const Raster& vv, const Raster& vh) {
    if (vv.channels != 1 || vh.channels != 1)
        throw std::invalid_argument("make_ratio_channel: inputs must be single-channel");
    if (vv.width != vh.width || vv.height != vh.height)
        throw std::invalid_argument("make_ratio_channel: shape mismatch");
    Raster out = Raster::make(vv.width, vv.height, 1, "dB");
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = vv.data[i] - vh.data[i];
    return out;
}

enum class SarMode { TwoCh, ThreeCh };

inline std::string_view to_string(SarMode m) { return m == SarMode::TwoCh ? "2ch" : "3ch"; }

inline SarMode sar_mode_from_string(std::string_view s) {
    if (s == "2ch" || s == "TWO_CH") return SarMode::TwoCh;
    if (s == "3ch" || s == "THREE_CH") return SarMode::ThreeCh;
    throw std::invalid_argument("unknown SAR mode: " + std::string(s));
}

// Stacks [VV, VH] or [VV, VH, VV-VH] and normalizes each channel with its
// own bounds entry. The ratio is taken on raw dB values before
// normalization, so it is a true physical difference rather than a
// difference of clipped values.
inline Raster assemble_sar_input(const Raster& vv, const Raster& vh, SarMode mode, const SaturationBounds& bounds) {
    if (vv.channels != 1 || vh.channels != 1)
        throw std::invalid_argument("assemble_sar_input: inputs must be single-channel");
    if (vv.width != vh.width || vv.height != vh.height)
        throw std::invalid_argument("assemble_sar_input: shape mismatch");
    const int channels = mode == SarMode::TwoCh ? 2 : 3;
    if (static_cast<int>(bounds.channel.size()) != channels)
        throw std::invalid_argument("assemble_sar_input: bounds/channel count mismatch");

    Raster stacked = Raster::make(vv.width, vv.height, channels, "dB");
    const std::size_t plane = stacked.plane_size();
    std::copy(vv.data.begin(), vv.data.end(), stacked.data.begin());
    std::copy(vh.data.begin(), vh.data.end(), stacked.data.begin() + plane);
    if (mode == SarMode::ThreeCh) {
        const Raster ratio = make_ratio_channel(vv, vh);
        std::copy(ratio.data.begin(), ratio.data.end(), stacked.data.begin() + 2 * plane);
    }
    return normalize_channel(stacked, bounds);
}

// Per-channel mean, standard deviation and requested nearest-rank quantiles,
// concatenated in channel order. Stands in for a CNN feature extractor at
// desk scale.
inline std::vector<double> summarize_features(const Raster& r, std::span<const double> quantiles) {
    for (std::size_t i = 0; i < quantiles.size(); ++i) {
        if (quantiles[i] < 0.0 || quantiles[i] > 1.0)
            throw std::invalid_argument("summarize_features: quantiles must lie in [0,1]");
        if (i > 0 && quantiles[i] < quantiles[i - 1])
            throw std::invalid_argument("summarize_features: quantiles must be sorted");
    }
    const std::size_t plane = r.plane_size();
    if (plane == 0) throw std::invalid_argument("summarize_features: empty raster");
    std::vector<double> features;
    features.reserve(static_cast<std::size_t>(r.channels) * (2 + quantiles.size()));
    std::vector<float> sorted(plane);
    for (int c = 0; c < r.channels; ++c) {
        const float* p = r.data.data() + static_cast<std::size_t>(c) * plane;
        double sum = 0.0, sumsq = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            sum += p[i];
            sumsq += static_cast<double>(p[i]) * p[i];
        }
        const double mean = sum / static_cast<double>(plane);
        const double var = std::max(0.0, sumsq / static_cast<double>(plane) - mean * mean);
        features.push_back(mean);
        features.push_back(std::sqrt(var));
        if (!quantiles.empty()) {
            std::copy(p, p + plane, sorted.begin());
            std::sort(sorted.begin(), sorted.end());
            for (double q : quantiles) {
                auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(plane)));
                k = std::max<std::size_t>(k, 1);
                features.push_back(sorted[k - 1]);
            }
        }
    }
    return features;
}

// --- file format: little-endian float32 planes plus a JSON sidecar -------

inline void save_raster(const Raster& r, const std::string& basename) {
    {
        std::ofstream bin(basename + ".bin", std::ios::binary);
        if (!bin) throw std::runtime_error("cannot write " + basename + ".bin");
        bin.write(reinterpret_cast<const char*>(r.data.data()),
                  static_cast<std::streamsize>(r.data.size() * sizeof(float)));
    }
    nlohmann::json meta = {{"width", r.width},
                           {"height", r.height},
                           {"channels", r.channels},
                           {"units", r.units},
                           {"layout", "planar"}};
    std::ofstream side(basename + ".json");
    if (!side) throw std::runtime_error("cannot write " + basename + ".json");
    side << meta.dump(2) << '\n';
}

inline Raster load_raster(const std::string& basename) {
    std::ifstream side(basename + ".json");
    if (!side) throw std::runtime_error("missing sidecar: " + basename + ".json");
    nlohmann::json meta = nlohmann::json::parse(side);
    Raster r = Raster::make(meta.at("width").get<int>(), meta.at("height").get<int>(),
                            meta.at("channels").get<int>(), meta.value("units", "dB"));
    std::ifstream bin(basename + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("missing raster data: " + basename + ".bin");
    bin.read(reinterpret_cast<char*>(r.data.data()), static_cast<std::streamsize>(r.data.size() * sizeof(float)));
    if (bin.gcount() != static_cast<std::streamsize>(r.data.size() * sizeof(float)))
        throw std::runtime_error("raster data truncated: " + basename + ".bin");
    return r;
}

inline nlohmann::json to_json(const SaturationBounds& b) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : b.channel) arr.push_back({{"lo", r.lo}, {"hi", r.hi}});
    return arr;
}

inline SaturationBounds bounds_from_json(const nlohmann::json& doc) {
    SaturationBounds b;
    for (const auto& item : doc) b.channel.push_back({item.at("lo").get<double>(), item.at("hi").get<double>()});
    return b;
}

}  // namespace fuseqa
