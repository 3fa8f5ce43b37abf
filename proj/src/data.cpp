#include "petlab/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "petlab/error.hpp"
#include "petlab/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace petlab::data {

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_io("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    if (!in.good() && !in.eof()) throw_io("failed reading " + path);
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw_io("cannot open " + path + " for writing");
    out << text;
    if (!out.good()) throw_io("failed writing " + path);
}

json parse_json_file(const std::string& path) {
    try {
        return json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw_input(path + ": " + e.what());
    }
}

bool known_split_name(const std::string& s) {
    return s.empty() || s == "train" || s == "val" || s == "test";
}

} // namespace

// ---- manifests ----

std::size_t DatasetManifest::caption_count() const {
    std::size_t n = 0;
    for (const ManifestItem& item : items) n += item.captions.size();
    return n;
}

void DatasetManifest::validate() const {
    std::set<long long> seen;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const ManifestItem& item = items[i];
        if (!seen.insert(item.image_id).second)
            throw_input("manifest item " + std::to_string(i) + ": duplicate image_id " +
                        std::to_string(item.image_id));
        if (item.captions.empty() || item.captions.size() > 5)
            throw_input("manifest item " + std::to_string(i) + ": expected 1..5 captions, got " +
                        std::to_string(item.captions.size()));
        for (const std::string& c : item.captions)
            if (c.empty())
                throw_input("manifest item " + std::to_string(i) + ": empty caption");
        if (item.image_path.empty())
            throw_input("manifest item " + std::to_string(i) + ": empty image_path");
        if (!known_split_name(item.split))
            throw_input("manifest item " + std::to_string(i) + ": unknown split '" + item.split +
                        "'");
    }
}

DatasetManifest load_manifest(const std::string& path, bool check_files) {
    const json doc = parse_json_file(path);
    if (!doc.is_object() || !doc.contains("items") || !doc["items"].is_array())
        throw_input(path + ": manifest must be an object with an items array");

    DatasetManifest manifest;
    const fs::path base = fs::path(path).parent_path();
    for (std::size_t i = 0; i < doc["items"].size(); ++i) {
        const json& j = doc["items"][i];
        const std::string where = path + " item " + std::to_string(i);
        if (!j.is_object()) throw_input(where + ": not an object");
        if (!j.contains("image_path") || !j["image_path"].is_string())
            throw_input(where + ": missing image_path");
        if (!j.contains("image_id") || !j["image_id"].is_number_integer())
            throw_input(where + ": missing integer image_id");
        if (!j.contains("captions") || !j["captions"].is_array())
            throw_input(where + ": missing captions array");

        ManifestItem item;
        item.image_path = j["image_path"].get<std::string>();
        item.image_id = j["image_id"].get<long long>();
        for (const json& c : j["captions"]) {
            if (!c.is_string()) throw_input(where + ": caption is not a string");
            item.captions.push_back(c.get<std::string>());
        }
        if (j.contains("split")) {
            if (!j["split"].is_string()) throw_input(where + ": split is not a string");
            item.split = j["split"].get<std::string>();
        }
        // Relative image paths are resolved against the manifest location.
        if (!item.image_path.empty() && fs::path(item.image_path).is_relative())
            item.image_path = (base / item.image_path).string();
        manifest.items.push_back(std::move(item));
    }
    manifest.validate();
    if (check_files)
        for (std::size_t i = 0; i < manifest.items.size(); ++i)
            if (!fs::exists(manifest.items[i].image_path))
                throw_input("manifest item " + std::to_string(i) + ": missing image file " +
                            manifest.items[i].image_path);
    return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    manifest.validate();
    json items = json::array();
    for (const ManifestItem& item : manifest.items) {
        json j{{"image_path", item.image_path},
               {"image_id", item.image_id},
               {"captions", item.captions}};
        if (!item.split.empty()) j["split"] = item.split;
        items.push_back(std::move(j));
    }
    write_text_file(path, json{{"items", std::move(items)}}.dump(2) + "\n");
}

SplitResult split_dataset(const DatasetManifest& manifest, const SplitRatios& ratios,
                          std::uint64_t seed) {
    manifest.validate();
    if (ratios.train < 0.0 || ratios.val < 0.0 || ratios.test < 0.0)
        throw_config("split ratios must be nonnegative");
    if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
        throw_config("split ratios must sum to 1");

    std::vector<std::size_t> unassigned;
    for (std::size_t i = 0; i < manifest.items.size(); ++i)
        if (manifest.items[i].split.empty()) unassigned.push_back(i);

    Rng rng = Rng::derive(seed, "dataset-split");
    rng.shuffle(unassigned);

    const std::size_t n = unassigned.size();
    const std::size_t n_val = static_cast<std::size_t>(std::floor(ratios.val * n));
    const std::size_t n_test = static_cast<std::size_t>(std::floor(ratios.test * n));
    std::size_t n_train = static_cast<std::size_t>(std::floor(ratios.train * n));
    n_train += n - n_train - n_val - n_test; // remainder to train

    std::vector<std::string> assignment(manifest.items.size());
    for (std::size_t i = 0; i < manifest.items.size(); ++i)
        assignment[i] = manifest.items[i].split;
    for (std::size_t r = 0; r < n; ++r)
        assignment[unassigned[r]] = r < n_train ? "train" : r < n_train + n_val ? "val" : "test";

    SplitResult out;
    for (std::size_t i = 0; i < manifest.items.size(); ++i) {
        ManifestItem item = manifest.items[i];
        item.split = assignment[i];
        if (assignment[i] == "train")
            out.train.items.push_back(std::move(item));
        else if (assignment[i] == "val")
            out.val.items.push_back(std::move(item));
        else
            out.test.items.push_back(std::move(item));
    }
    return out;
}

// ---- raster I/O ----

std::vector<unsigned char> encode_ppm(const ImageTensor& image) {
    if (image.height < 1 || image.width < 1 ||
        image.data.size() != static_cast<std::size_t>(image.height) * image.width * 3)
        throw_input("encode_ppm: malformed image tensor");
    std::string header = "P6\n" + std::to_string(image.width) + " " +
                         std::to_string(image.height) + "\n255\n";
    std::vector<unsigned char> bytes(header.begin(), header.end());
    bytes.reserve(bytes.size() + image.data.size());
    for (double v : image.data) {
        const double clamped = std::min(1.0, std::max(0.0, v));
        bytes.push_back(static_cast<unsigned char>(std::lround(clamped * 255.0)));
    }
    return bytes;
}

namespace {

// Netpbm header token reader: skips whitespace and '#' comments.
long read_pnm_int(const std::vector<unsigned char>& bytes, std::size_t& pos,
                  const std::string& origin) {
    while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(bytes[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos]))
        throw_input(origin + ": malformed header");
    long value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
        value = value * 10 + (bytes[pos] - '0');
        if (value > 1'000'000'000L) throw_input(origin + ": header value out of range");
        ++pos;
    }
    return value;
}

} // namespace

ImageTensor decode_ppm(const std::vector<unsigned char>& bytes, const std::string& origin) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
        throw_input(origin + ": not a binary PPM (P6) file");
    std::size_t pos = 2;
    const long width = read_pnm_int(bytes, pos, origin);
    const long height = read_pnm_int(bytes, pos, origin);
    const long maxval = read_pnm_int(bytes, pos, origin);
    if (width < 1 || height < 1) throw_input(origin + ": bad dimensions");
    if (maxval < 1 || maxval > 255)
        throw_input(origin + ": unsupported maxval " + std::to_string(maxval));
    if (pos >= bytes.size() || !std::isspace(bytes[pos]))
        throw_input(origin + ": malformed header");
    ++pos; // single whitespace byte before the raster

    const std::size_t need = static_cast<std::size_t>(width) * height * 3;
    if (bytes.size() - pos < need) throw_input(origin + ": truncated pixel data");
    ImageTensor image = ImageTensor::zeros(static_cast<int>(height), static_cast<int>(width));
    for (std::size_t k = 0; k < need; ++k)
        image.data[k] = static_cast<double>(bytes[pos + k]) / static_cast<double>(maxval);
    return image;
}

ImageTensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_io("cannot open " + path);
    std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                     std::istreambuf_iterator<char>()};
    return decode_ppm(bytes, path);
}

void write_ppm(const ImageTensor& image, const std::string& path) {
    const std::vector<unsigned char> bytes = encode_ppm(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw_io("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out.good()) throw_io("failed writing " + path);
}

// ---- preprocessing ----

NormalizationConstants NormalizationConstants::backbone() {
    NormalizationConstants n;
    n.mean = {0.48145466, 0.4578275, 0.40821073};
    n.stddev = {0.26862954, 0.26130258, 0.27577711};
    return n;
}

NormalizationConstants NormalizationConstants::identity() { return NormalizationConstants{}; }

ImageTensor resize_bilinear(const ImageTensor& image, int target_height, int target_width) {
    if (image.height < 1 || image.width < 1) throw_input("resize: empty source image");
    if (target_height < 1 || target_width < 1) throw_input("resize: bad target size");

    ImageTensor out = ImageTensor::zeros(target_height, target_width);
    const double sy = static_cast<double>(image.height) / target_height;
    const double sx = static_cast<double>(image.width) / target_width;
    for (int y = 0; y < target_height; ++y) {
        const double src_y = std::min(std::max((y + 0.5) * sy - 0.5, 0.0),
                                      static_cast<double>(image.height - 1));
        const int y0 = static_cast<int>(src_y);
        const int y1 = std::min(y0 + 1, image.height - 1);
        const double wy = src_y - y0;
        for (int x = 0; x < target_width; ++x) {
            const double src_x = std::min(std::max((x + 0.5) * sx - 0.5, 0.0),
                                          static_cast<double>(image.width - 1));
            const int x0 = static_cast<int>(src_x);
            const int x1 = std::min(x0 + 1, image.width - 1);
            const double wx = src_x - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = (1.0 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c);
                const double bot = (1.0 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c);
                out.data[(static_cast<std::size_t>(y) * target_width + x) * 3 + c] =
                    (1.0 - wy) * top + wy * bot;
            }
        }
    }
    return out;
}

ImageTensor preprocess_image(const ImageTensor& raw, int target_size,
                             const NormalizationConstants& norm) {
    for (double s : norm.stddev)
        if (!(s > 0.0)) throw_config("normalization stddev must be positive");
    ImageTensor out = resize_bilinear(raw, target_size, target_size);
    for (std::size_t k = 0; k < out.data.size(); ++k) {
        const int c = static_cast<int>(k % 3);
        out.data[k] = (out.data[k] - norm.mean[static_cast<std::size_t>(c)]) /
                      norm.stddev[static_cast<std::size_t>(c)];
    }
    return out;
}

// ---- tokenization ----

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string current;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!current.empty()) words.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

int Vocab::id_of(const std::string& word) const {
    auto it = index.find(word);
    return it == index.end() ? kUnk : it->second;
}

Vocab Vocab::build(const std::vector<std::string>& texts, int max_size) {
    if (max_size != 0 && max_size < 4)
        throw_config("vocab max_size must be 0 or at least 4 (three specials plus a word)");
    std::map<std::string, long long> counts;
    for (const std::string& text : texts)
        for (const std::string& word : split_words(text)) ++counts[word];

    std::vector<std::pair<std::string, long long>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocab vocab;
    vocab.words = {"<unk>", "<bos>", "<eos>"};
    for (const auto& [word, count] : ranked) {
        (void)count;
        if (max_size != 0 && vocab.size() >= max_size) break;
        vocab.words.push_back(word);
    }
    for (int i = 0; i < vocab.size(); ++i) vocab.index.emplace(vocab.words[static_cast<std::size_t>(i)], i);
    return vocab;
}

Vocab Vocab::load(const std::string& path) {
    const json doc = parse_json_file(path);
    if (!doc.is_object() || !doc.contains("words") || !doc["words"].is_array())
        throw_input(path + ": vocab must be an object with a words array");
    Vocab vocab;
    for (const json& w : doc["words"]) {
        if (!w.is_string()) throw_input(path + ": vocab entry is not a string");
        vocab.words.push_back(w.get<std::string>());
    }
    if (vocab.size() < 3 || vocab.words[0] != "<unk>" || vocab.words[1] != "<bos>" ||
        vocab.words[2] != "<eos>")
        throw_input(path + ": vocab must start with <unk>, <bos>, <eos>");
    for (int i = 0; i < vocab.size(); ++i)
        if (!vocab.index.emplace(vocab.words[static_cast<std::size_t>(i)], i).second)
            throw_input(path + ": duplicate vocab word " + vocab.words[static_cast<std::size_t>(i)]);
    return vocab;
}

void Vocab::save(const std::string& path) const {
    write_text_file(path, json{{"words", words}}.dump(2) + "\n");
}

std::vector<int> tokenize(const std::string& text, const Vocab& vocab, int context_length) {
    if (context_length < 3)
        throw_input("tokenize: context_length must be at least 3");
    const std::vector<std::string> words = split_words(text);
    if (words.empty()) throw_input("tokenize: empty text");

    std::vector<int> ids;
    ids.reserve(words.size() + 2);
    ids.push_back(Vocab::kBos);
    for (const std::string& word : words) ids.push_back(vocab.id_of(word));
    ids.push_back(Vocab::kEos);
    if (static_cast<int>(ids.size()) > context_length) {
        ids.resize(static_cast<std::size_t>(context_length));
        ids.back() = Vocab::kEos;
    }
    return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocab& vocab) {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= vocab.size())
            throw_input("detokenize: id " + std::to_string(id) + " outside vocab");
        if (id == Vocab::kBos || id == Vocab::kEos) continue;
        if (!out.empty()) out.push_back(' ');
        out += vocab.words[static_cast<std::size_t>(id)];
    }
    return out;
}

// ---- synthetic dataset ----

void ToyDatasetConfig::validate() const {
    if (n_classes < 1 || items_per_class < 1 || captions_per_image < 1)
        throw_config("toy dataset counts must be >= 1");
    if (captions_per_image > 5)
        throw_config("toy dataset supports at most 5 captions per image");
    if (image_size < 1) throw_config("toy image_size must be >= 1");
    if (channels != 3) throw_config("toy dataset images are 3-channel");
    if (noise_std < 0.0) throw_config("toy noise_std must be >= 0");
    if (vocab_size != 0 && vocab_size < 4)
        throw_config("toy vocab_size must be 0 or at least 4");
}

namespace {

const char* const kClassNames[26] = {
    "alpha", "bravo",  "charlie", "delta", "echo",   "foxtrot", "golf",    "hotel",  "india",
    "juliett", "kilo", "lima",    "mike",  "november", "oscar", "papa",    "quebec", "romeo",
    "sierra", "tango", "uniform", "victor", "whiskey", "xray",  "yankee",  "zulu"};

std::string class_name(int c) {
    if (c < 26) return kClassNames[c];
    return "sector" + std::to_string(c);
}

// Two-slot templates ({d} descriptor, {c} class name) give 128 distinct
// strings per class, so same-class images rarely share a caption verbatim.
// Duplicated strings would make ranking ties (and exactly cancelling
// hard-negative gradients) the norm rather than the exception.
const char* const kCaptionTemplates[] = {
    "a photo of the {d} {c} area",
    "an aerial view of the {d} {c} region",
    "this image shows a {d} {c} scene",
    "many {d} {c} structures in the picture",
    "a satellite shot over the {d} {c} zone",
    "the {d} {c} field seen from above",
    "few clouds over the {d} {c} land",
    "a {d} {c} landscape photograph",
};
constexpr std::size_t kTemplateCount = sizeof(kCaptionTemplates) / sizeof(kCaptionTemplates[0]);

const char* const kDescriptors[] = {"small", "large", "bright", "dark",  "green", "gray",
                                    "wide",  "narrow", "old",   "new",   "quiet", "busy",
                                    "dense", "sparse", "dry",   "wet"};
constexpr std::size_t kDescriptorCount = sizeof(kDescriptors) / sizeof(kDescriptors[0]);

std::string fill_slot(const std::string& tpl, const std::string& slot, const std::string& word) {
    const std::size_t at = tpl.find(slot);
    return tpl.substr(0, at) + word + tpl.substr(at + slot.size());
}

std::string toy_image_name(int index) {
    std::string digits = std::to_string(index);
    while (digits.size() < 5) digits.insert(digits.begin(), '0');
    return "images/img_" + digits + ".ppm";
}

} // namespace

ToyDataset synthesize_toy_dataset(const ToyDatasetConfig& cfg) {
    cfg.validate();

    std::vector<ImageTensor> prototypes;
    prototypes.reserve(static_cast<std::size_t>(cfg.n_classes));
    for (int c = 0; c < cfg.n_classes; ++c) {
        Rng rng = Rng::derive(cfg.seed, "toy-proto", static_cast<std::uint64_t>(c));
        ImageTensor proto = ImageTensor::zeros(cfg.image_size, cfg.image_size);
        for (double& v : proto.data) v = 0.1 + 0.8 * rng.uniform();
        prototypes.push_back(std::move(proto));
    }

    ToyDataset toy;
    std::vector<std::string> all_captions;
    for (int c = 0; c < cfg.n_classes; ++c) {
        for (int k = 0; k < cfg.items_per_class; ++k) {
            const int i = c * cfg.items_per_class + k;
            Rng noise = Rng::derive(cfg.seed, "toy-noise", static_cast<std::uint64_t>(i));
            ImageTensor image = prototypes[static_cast<std::size_t>(c)];
            if (cfg.noise_std > 0.0)
                for (double& v : image.data)
                    v = std::min(1.0, std::max(0.0, v + cfg.noise_std * noise.normal()));

            Rng caps = Rng::derive(cfg.seed, "toy-captions", static_cast<std::uint64_t>(i));
            ManifestItem item;
            item.image_path = toy_image_name(i);
            item.image_id = i;
            for (int t = 0; t < cfg.captions_per_image; ++t) {
                // Per caption: one template draw, then one descriptor draw.
                const std::string& tpl = kCaptionTemplates[caps.uniform_index(kTemplateCount)];
                std::string caption =
                    fill_slot(fill_slot(tpl, "{d}", kDescriptors[caps.uniform_index(
                                                        kDescriptorCount)]),
                              "{c}", class_name(c));
                all_captions.push_back(caption);
                item.captions.push_back(std::move(caption));
            }
            toy.manifest.items.push_back(std::move(item));
            toy.images.push_back(std::move(image));
            toy.class_of_item.push_back(c);
        }
    }
    toy.vocab = Vocab::build(all_captions, cfg.vocab_size);
    toy.manifest.validate();
    return toy;
}

void export_toy_dataset(const ToyDataset& toy, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    if (ec) throw_io("cannot create " + dir + ": " + ec.message());
    for (std::size_t i = 0; i < toy.images.size(); ++i) {
        const fs::path rel = toy_image_name(static_cast<int>(i));
        write_ppm(toy.images[i], (fs::path(dir) / rel).string());
    }
    save_manifest(toy.manifest, (fs::path(dir) / "manifest.json").string());
    toy.vocab.save((fs::path(dir) / "vocab.json").string());
}

// ---- assembling encoder-ready splits ----

ImageLoader disk_loader() {
    return [](const ManifestItem& item) { return read_ppm(item.image_path); };
}

RetrievalSplit prepare_split(const DatasetManifest& manifest, const ImageLoader& load_image,
                             const Vocab& vocab, int context_length, int image_size,
                             const NormalizationConstants& norm) {
    if (manifest.items.empty()) throw_input("prepare_split: empty manifest");
    RetrievalSplit split;
    for (std::size_t i = 0; i < manifest.items.size(); ++i) {
        const ManifestItem& item = manifest.items[i];
        split.images.push_back(preprocess_image(load_image(item), image_size, norm));
        for (const std::string& caption : item.captions) {
            split.captions.push_back(tokenize(caption, vocab, context_length));
            split.caption_to_image.push_back(static_cast<int>(i));
        }
    }
    split.validate();
    return split;
}

PreparedDataset prepare_toy(const ToyDataset& toy, const SplitRatios& ratios, std::uint64_t seed,
                            int context_length, int image_size) {
    const SplitResult splits = split_dataset(toy.manifest, ratios, seed);
    ImageLoader loader = [&toy](const ManifestItem& item) {
        if (item.image_id < 0 || item.image_id >= static_cast<long long>(toy.images.size()))
            throw_input("toy manifest names missing image " + std::to_string(item.image_id));
        return toy.images[static_cast<std::size_t>(item.image_id)];
    };
    PreparedDataset prepared;
    prepared.train = prepare_split(splits.train, loader, toy.vocab, context_length, image_size,
                                   NormalizationConstants::identity());
    prepared.val = prepare_split(splits.val, loader, toy.vocab, context_length, image_size,
                                 NormalizationConstants::identity());
    prepared.test = prepare_split(splits.test, loader, toy.vocab, context_length, image_size,
                                  NormalizationConstants::identity());
    prepared.vocab = toy.vocab;
    return prepared;
}

} // namespace petlab::data
