#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "petlab/eval.hpp"
#include "petlab/image.hpp"

namespace petlab::data {

// ---- manifests ----

struct ManifestItem {
    std::string image_path;
    long long image_id = 0;
    std::vector<std::string> captions;
    std::string split; // "", "train", "val" or "test"
};

struct DatasetManifest {
    std::vector<ManifestItem> items;

    std::size_t caption_count() const;
    void validate() const; // duplicate ids, empty captions, unknown split names
};

// check_files additionally requires every image_path to exist on disk.
DatasetManifest load_manifest(const std::string& path, bool check_files = false);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct SplitResult {
    DatasetManifest train;
    DatasetManifest val;
    DatasetManifest test;
};

// Seeded shuffle, then floor allocation with the remainder going to train.
// Items carrying a preassigned split keep it; only the rest are shuffled.
// Output preserves the input item order inside each split.
SplitResult split_dataset(const DatasetManifest& manifest, const SplitRatios& ratios,
                          std::uint64_t seed);

// ---- raster I/O (binary PPM, 8-bit) ----

ImageTensor read_ppm(const std::string& path);
void write_ppm(const ImageTensor& image, const std::string& path);

// Round-trip helpers used by the reader/writer and the toy exporter.
std::vector<unsigned char> encode_ppm(const ImageTensor& image);
ImageTensor decode_ppm(const std::vector<unsigned char>& bytes, const std::string& origin);

// ---- preprocessing ----

struct NormalizationConstants {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> stddev{1.0, 1.0, 1.0};

    // Channel statistics published with the pretrained backbone weights.
    static NormalizationConstants backbone();
    static NormalizationConstants identity();
};

ImageTensor resize_bilinear(const ImageTensor& image, int target_height, int target_width);
ImageTensor preprocess_image(const ImageTensor& raw, int target_size,
                             const NormalizationConstants& norm);

// ---- tokenization ----

struct Vocab {
    static constexpr int kUnk = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;

    std::vector<std::string> words; // id -> word; first three are specials
    std::unordered_map<std::string, int> index;

    int size() const { return static_cast<int>(words.size()); }
    int id_of(const std::string& word) const;

    // Frequency-ranked vocabulary (ties alphabetical). max_size 0 keeps every
    // word; otherwise the total including the three specials is capped.
    static Vocab build(const std::vector<std::string>& texts, int max_size = 0);
    static Vocab load(const std::string& path);
    void save(const std::string& path) const;
};

std::vector<std::string> split_words(const std::string& text); // lowercase, whitespace

// BOS + word ids + EOS, truncated to context_length with EOS kept last.
std::vector<int> tokenize(const std::string& text, const Vocab& vocab, int context_length);
std::string detokenize(const std::vector<int>& ids, const Vocab& vocab);

// ---- synthetic dataset ----

struct ToyDatasetConfig {
    int n_classes = 8;
    int items_per_class = 25;
    int captions_per_image = 5;
    int image_size = 16;
    int channels = 3;
    int vocab_size = 0; // 0 = keep every generated word
    double noise_std = 0.05;
    std::uint64_t seed = 7;

    void validate() const;
};

struct ToyDataset {
    DatasetManifest manifest;        // image_id doubles as the image index
    std::vector<ImageTensor> images; // aligned with manifest.items
    std::vector<int> class_of_item;
    Vocab vocab;
};

// Per class: one random prototype image and a caption bank that names only
// that class; items are prototype + clipped Gaussian noise.
ToyDataset synthesize_toy_dataset(const ToyDatasetConfig& cfg);

// Writes images/*.ppm, manifest.json and vocab.json under dir.
void export_toy_dataset(const ToyDataset& toy, const std::string& dir);

// ---- assembling encoder-ready splits ----

using ImageLoader = std::function<ImageTensor(const ManifestItem&)>;

ImageLoader disk_loader(); // reads item.image_path as PPM

RetrievalSplit prepare_split(const DatasetManifest& manifest, const ImageLoader& load_image,
                             const Vocab& vocab, int context_length, int image_size,
                             const NormalizationConstants& norm);

struct PreparedDataset {
    RetrievalSplit train;
    RetrievalSplit val;
    RetrievalSplit test;
    Vocab vocab;
};

PreparedDataset prepare_toy(const ToyDataset& toy, const SplitRatios& ratios, std::uint64_t seed,
                            int context_length, int image_size);

} // namespace petlab::data
