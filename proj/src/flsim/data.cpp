#include "flsim/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "flsim/model.hpp"

namespace flsim {

void validate_dataset(const Dataset& ds, const char* where) {
    const size_t dim = ds.feature_dim();
    for (const LabeledExample& ex : ds.examples) {
        if (ex.features.size() != dim)
            throw InputError(std::string(where) + ": inconsistent feature dimension");
        if (ex.label >= ds.num_classes)
            throw InputError(std::string(where) + ": label " + std::to_string(ex.label) +
                             " out of range for " + std::to_string(ds.num_classes) + " classes");
    }
}

Partition dirichlet_partition(const Dataset& src, size_t n_clients, double alpha, RngStream rng) {
    if (src.empty()) throw InputError("dirichlet_partition: empty source dataset");
    if (n_clients < 1) throw InputError("dirichlet_partition: need at least one client");
    if (alpha <= 0.0) throw InputError("dirichlet_partition: alpha must be positive");

    Partition part;
    part.shards.assign(n_clients, Dataset{{}, src.num_classes});

    // Group example indices by class, shuffled so that source ordering does
    // not leak into shard composition.
    std::vector<std::vector<size_t>> by_class(src.num_classes);
    for (size_t i = 0; i < src.size(); ++i) by_class[src.examples[i].label].push_back(i);

    for (size_t c = 0; c < by_class.size(); ++c) {
        std::vector<size_t>& members = by_class[c];
        if (members.empty()) continue;
        rng.shuffle(members);

        // Dirichlet(alpha * 1_N) via normalized gammas.
        std::vector<double> props(n_clients);
        double total = 0.0;
        for (double& p : props) {
            p = rng.gamma(alpha);
            total += p;
        }
        if (total <= 0.0) {
            std::fill(props.begin(), props.end(), 1.0);
            total = static_cast<double>(n_clients);
        }

        // Largest-remainder rounding keeps the class count conserved exactly.
        const double k = static_cast<double>(members.size());
        std::vector<size_t> counts(n_clients);
        std::vector<std::pair<double, size_t>> remainders(n_clients);
        size_t assigned = 0;
        for (size_t j = 0; j < n_clients; ++j) {
            const double quota = props[j] / total * k;
            counts[j] = static_cast<size_t>(std::floor(quota));
            remainders[j] = {quota - std::floor(quota), j};
            assigned += counts[j];
        }
        std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (size_t r = 0; assigned < members.size(); ++r, ++assigned) ++counts[remainders[r].second];

        size_t cursor = 0;
        for (size_t j = 0; j < n_clients; ++j) {
            for (size_t t = 0; t < counts[j]; ++t)
                part.shards[j].examples.push_back(src.examples[members[cursor++]]);
        }
    }
    return part;
}

Dataset flip_static(const Dataset& ds) {
    if (ds.num_classes < 2) throw InputError("flip_static: need at least 2 classes");
    const size_t c = ds.num_classes;
    Dataset out = ds;
    if (c % 2 == 0) {
        for (LabeledExample& ex : out.examples) ex.label = c - 1 - ex.label;
    } else {
        for (LabeledExample& ex : out.examples) ex.label = (c - ex.label) % c;
    }
    return out;
}

Dataset flip_dynamic(const Dataset& ds, const ModelSpec& surrogate_spec,
                     const ParamVector& surrogate_params) {
    if (surrogate_spec.num_classes() != ds.num_classes)
        throw InputError("flip_dynamic: surrogate classes do not match dataset");
    if (!ds.empty() && surrogate_spec.input_dim() != ds.feature_dim())
        throw InputError("flip_dynamic: surrogate input dim does not match dataset features");
    Dataset out = ds;
    for (LabeledExample& ex : out.examples) {
        const ParamVector probs = predict_proba(surrogate_spec, surrogate_params, ex.features);
        size_t least = 0;
        for (size_t j = 1; j < probs.size(); ++j)
            if (probs[j] < probs[least]) least = j;
        ex.label = least;
    }
    return out;
}

Dataset augment_gaussian(const Dataset& ds, double noise_sigma, size_t target_size, RngStream rng,
                         Rounding rounding) {
    if (ds.empty()) throw InputError("augment_gaussian: empty dataset");
    if (noise_sigma < 0.0) throw InputError("augment_gaussian: negative noise sigma");
    if (target_size < ds.size())
        throw InputError("augment_gaussian: target size " + std::to_string(target_size) +
                         " below dataset size " + std::to_string(ds.size()));
    Dataset out = ds;
    out.examples.reserve(target_size);
    while (out.examples.size() < target_size) {
        LabeledExample ex = ds.examples[rng.uniform_index(ds.size())];
        for (double& f : ex.features) {
            f += noise_sigma * rng.normal();
            if (rounding == Rounding::round_to_int) f = std::round(f);
        }
        out.examples.push_back(std::move(ex));
    }
    return out;
}

double default_noise_sigma(const Dataset& ds) {
    if (ds.empty()) return 0.0;
    const size_t dim = ds.feature_dim();
    if (dim == 0) return 0.0;
    double acc = 0.0;
    for (size_t j = 0; j < dim; ++j) {
        double mean = 0.0;
        for (const LabeledExample& ex : ds.examples) mean += ex.features[j];
        mean /= static_cast<double>(ds.size());
        double var = 0.0;
        for (const LabeledExample& ex : ds.examples) {
            const double d = ex.features[j] - mean;
            var += d * d;
        }
        acc += std::sqrt(var / static_cast<double>(ds.size()));
    }
    return 0.05 * acc / static_cast<double>(dim);
}

namespace {

// Distinct unit directions for cluster means. Opposing basis vectors cover
// C <= 2*dim; beyond that a circle in the first two coordinates.
std::vector<double> mixture_mean(size_t c, size_t num_classes, size_t dim, double separation) {
    std::vector<double> mu(dim, 0.0);
    if (separation == 0.0) return mu;
    if (num_classes <= 2 * dim) {
        mu[c / 2] = (c % 2 == 0) ? separation : -separation;
        return mu;
    }
    if (dim >= 2) {
        constexpr double two_pi = 6.283185307179586476925286766559;
        const double angle = two_pi * static_cast<double>(c) / static_cast<double>(num_classes);
        mu[0] = separation * std::cos(angle);
        mu[1] = separation * std::sin(angle);
        return mu;
    }
    // 1-D fallback: evenly spaced points in [-separation, separation].
    mu[0] = -separation + 2.0 * separation * static_cast<double>(c) /
                              static_cast<double>(num_classes - 1);
    return mu;
}

} // namespace

Dataset synth_mixture(size_t num_classes, size_t dim, size_t per_class, double separation,
                      RngStream rng) {
    if (num_classes < 2) throw InputError("synth_mixture: need at least 2 classes");
    if (dim < 1 || per_class < 1) throw InputError("synth_mixture: dim and per_class must be positive");

    Dataset out;
    out.num_classes = num_classes;
    out.examples.reserve(num_classes * per_class);
    for (size_t c = 0; c < num_classes; ++c) {
        const std::vector<double> mu = mixture_mean(c, num_classes, dim, separation);
        for (size_t i = 0; i < per_class; ++i) {
            LabeledExample ex;
            ex.label = c;
            ex.features.resize(dim);
            for (size_t j = 0; j < dim; ++j) ex.features[j] = mu[j] + rng.normal();
            out.examples.push_back(std::move(ex));
        }
    }
    return out;
}

namespace {

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;

std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

uint32_t read_be32(const std::vector<unsigned char>& buf, size_t offset, const std::string& path) {
    if (offset + 4 > buf.size())
        throw FormatError(path + ": truncated at byte offset " + std::to_string(offset));
    return (static_cast<uint32_t>(buf[offset]) << 24) | (static_cast<uint32_t>(buf[offset + 1]) << 16) |
           (static_cast<uint32_t>(buf[offset + 2]) << 8) | static_cast<uint32_t>(buf[offset + 3]);
}

} // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img = read_file_bytes(images_path);
    const auto lab = read_file_bytes(labels_path);

    if (read_be32(img, 0, images_path) != kIdxImagesMagic)
        throw FormatError(images_path + ": bad magic at byte offset 0");
    if (read_be32(lab, 0, labels_path) != kIdxLabelsMagic)
        throw FormatError(labels_path + ": bad magic at byte offset 0");

    const uint32_t n_images = read_be32(img, 4, images_path);
    const uint32_t rows = read_be32(img, 8, images_path);
    const uint32_t cols = read_be32(img, 12, images_path);
    const uint32_t n_labels = read_be32(lab, 4, labels_path);
    if (n_images != n_labels)
        throw FormatError("IDX pair mismatch: " + std::to_string(n_images) + " images vs " +
                          std::to_string(n_labels) + " labels");

    const size_t pixels = static_cast<size_t>(rows) * cols;
    if (img.size() != 16 + static_cast<size_t>(n_images) * pixels)
        throw FormatError(images_path + ": payload size mismatch at byte offset 16");
    if (lab.size() != 8 + static_cast<size_t>(n_labels))
        throw FormatError(labels_path + ": payload size mismatch at byte offset 8");

    Dataset out;
    out.examples.reserve(n_images);
    size_t max_label = 0;
    for (size_t i = 0; i < n_images; ++i) {
        LabeledExample ex;
        ex.features.resize(pixels);
        for (size_t p = 0; p < pixels; ++p)
            ex.features[p] = static_cast<double>(img[16 + i * pixels + p]) / 255.0;
        ex.label = lab[8 + i];
        max_label = std::max(max_label, ex.label);
        out.examples.push_back(std::move(ex));
    }
    out.num_classes = std::max<size_t>(max_label + 1, 2);
    return out;
}

Dataset load_csv(const std::string& path, size_t label_column, bool has_header) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open file: " + path);

    Dataset out;
    std::string line;
    size_t row = 0;
    size_t max_label = 0;
    while (std::getline(in, line)) {
        ++row;
        if (has_header && row == 1) continue;
        if (line.empty()) continue;
        if (!line.empty() && line.back() == '\r') line.pop_back();

        std::vector<double> fields;
        size_t start = 0;
        while (start <= line.size()) {
            size_t comma = line.find(',', start);
            if (comma == std::string::npos) comma = line.size();
            const char* first = line.data() + start;
            const char* last = line.data() + comma;
            double value = 0.0;
            const auto [ptr, ec] = std::from_chars(first, last, value);
            if (ec != std::errc() || ptr != last)
                throw FormatError(path + ": non-numeric field in row " + std::to_string(row));
            fields.push_back(value);
            start = comma + 1;
        }
        if (label_column >= fields.size())
            throw FormatError(path + ": label column " + std::to_string(label_column) +
                              " out of range in row " + std::to_string(row));
        const double raw_label = fields[label_column];
        if (raw_label < 0.0 || raw_label != std::floor(raw_label))
            throw FormatError(path + ": label is not a non-negative integer in row " +
                              std::to_string(row));
        LabeledExample ex;
        ex.label = static_cast<size_t>(raw_label);
        max_label = std::max(max_label, ex.label);
        for (size_t j = 0; j < fields.size(); ++j)
            if (j != label_column) ex.features.push_back(fields[j]);
        out.examples.push_back(std::move(ex));
    }
    out.num_classes = std::max<size_t>(max_label + 1, 2);
    validate_dataset(out, "load_csv");
    return out;
}

uint64_t dataset_fingerprint(const Dataset& ds) {
    uint64_t h = 0xcbf2'9ce4'8422'2325ull;
    auto mix_u64 = [&h](uint64_t bits) {
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xff;
            h *= 0x0000'0100'0000'01b3ull;
        }
    };
    mix_u64(ds.num_classes);
    mix_u64(ds.size());
    for (const LabeledExample& ex : ds.examples) {
        mix_u64(ex.label);
        for (double f : ex.features) {
            uint64_t bits;
            std::memcpy(&bits, &f, sizeof(bits));
            mix_u64(bits);
        }
    }
    return h;
}

} // namespace flsim
