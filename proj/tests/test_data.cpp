#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "petlab/data.hpp"
#include "petlab/error.hpp"
#include "petlab/rng.hpp"

using namespace petlab;
using namespace petlab::data;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

DatasetManifest sample_manifest(int n, int captions_each = 2) {
    DatasetManifest m;
    for (int i = 0; i < n; ++i) {
        ManifestItem item;
        item.image_path = "images/img_" + std::to_string(i) + ".ppm";
        item.image_id = i;
        for (int c = 0; c < captions_each; ++c)
            item.captions.push_back("caption " + std::to_string(i) + " " + std::to_string(c));
        m.items.push_back(std::move(item));
    }
    return m;
}

Vocab handmade_vocab() {
    Vocab v;
    v.words = {"<unk>", "<bos>", "<eos>", "pad3", "pad4", "two",
               "pad6",  "pad7",  "pad8",  "planes"};
    for (int i = 0; i < v.size(); ++i) v.index.emplace(v.words[static_cast<std::size_t>(i)], i);
    return v;
}

std::vector<long long> ids_of(const DatasetManifest& m) {
    std::vector<long long> ids;
    for (const auto& item : m.items) ids.push_back(item.image_id);
    return ids;
}

ImageTensor random_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    ImageTensor img = ImageTensor::zeros(h, w);
    for (double& v : img.data) v = rng.uniform();
    return img;
}

} // namespace

TEST_CASE("manifest JSON round trip") {
    fs::path dir = fresh_dir("petlab_test_manifest");
    DatasetManifest m = sample_manifest(2, 5);
    m.items[1].split = "val";
    save_manifest(m, (dir / "manifest.json").string());

    DatasetManifest loaded = load_manifest((dir / "manifest.json").string());
    REQUIRE(loaded.items.size() == 2);
    CHECK(loaded.items[0].captions.size() == 5);
    CHECK(loaded.items[1].image_id == 1);
    CHECK(loaded.items[1].split == "val");
    CHECK(loaded.items[0].split.empty());
    // Relative paths are resolved against the manifest directory.
    CHECK(loaded.items[0].image_path == (dir / "images/img_0.ppm").string());
}

TEST_CASE("manifest validation failures carry the item index") {
    fs::path dir = fresh_dir("petlab_test_manifest_bad");
    auto write = [&](const std::string& text) {
        std::ofstream((dir / "m.json").string()) << text;
        return (dir / "m.json").string();
    };

    CHECK_THROWS_AS(load_manifest(write("{not json")), Error);
    CHECK_THROWS_AS(load_manifest(write("{\"items\": 7}")), Error);

    try {
        load_manifest(write(R"({"items": [
            {"image_path": "a.ppm", "image_id": 3, "captions": ["x"]},
            {"image_path": "b.ppm", "image_id": 3, "captions": ["y"]}]})"));
        FAIL("expected duplicate id error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Input);
        CHECK(std::string(e.what()).find("duplicate image_id 3") != std::string::npos);
        CHECK(std::string(e.what()).find("item 1") != std::string::npos);
    }

    CHECK_THROWS_AS(
        load_manifest(write(R"({"items": [{"image_path": "a.ppm", "image_id": 1, "captions": []}]})")),
        Error);
    CHECK_THROWS_AS(
        load_manifest(write(
            R"({"items": [{"image_path": "a.ppm", "image_id": 1, "captions": ["a","b","c","d","e","f"]}]})")),
        Error);
    CHECK_THROWS_AS(
        load_manifest(write(R"({"items": [{"image_path": "a.ppm", "image_id": 1, "captions": [""]}]})")),
        Error);
    CHECK_THROWS_AS(
        load_manifest(write(
            R"({"items": [{"image_path": "a.ppm", "image_id": 1, "captions": ["x"], "split": "dev"}]})")),
        Error);
    CHECK_THROWS_AS(load_manifest(write(R"({"items": [{"image_id": 1, "captions": ["x"]}]})")),
                    Error);

    // check_files reports the first missing image eagerly.
    const std::string ok = write(
        R"({"items": [{"image_path": "missing.ppm", "image_id": 1, "captions": ["x"]}]})");
    CHECK_NOTHROW(load_manifest(ok, false));
    CHECK_THROWS_AS(load_manifest(ok, true), Error);
}

TEST_CASE("dataset splitting follows the floor rule with remainder to train") {
    SplitResult s100 = split_dataset(sample_manifest(100), SplitRatios{}, 1);
    CHECK(s100.train.items.size() == 80);
    CHECK(s100.val.items.size() == 10);
    CHECK(s100.test.items.size() == 10);

    SplitResult s13 = split_dataset(sample_manifest(13), SplitRatios{}, 1);
    CHECK(s13.train.items.size() == 11);
    CHECK(s13.val.items.size() == 1);
    CHECK(s13.test.items.size() == 1);

    SplitResult again = split_dataset(sample_manifest(13), SplitRatios{}, 1);
    CHECK(ids_of(again.train) == ids_of(s13.train));
    CHECK(ids_of(again.val) == ids_of(s13.val));
    CHECK(ids_of(again.test) == ids_of(s13.test));

    SplitResult other = split_dataset(sample_manifest(100), SplitRatios{}, 2);
    CHECK(ids_of(other.train) != ids_of(s100.train));
}

TEST_CASE("dataset splitting partitions the manifest") {
    DatasetManifest m = sample_manifest(57);
    SplitResult s = split_dataset(m, SplitRatios{0.6, 0.25, 0.15}, 9);
    std::set<long long> seen;
    for (const DatasetManifest* part : {&s.train, &s.val, &s.test})
        for (const auto& item : part->items) CHECK(seen.insert(item.image_id).second);
    CHECK(seen.size() == 57);
    // Whole items move, so captions always travel with their image.
    CHECK(s.train.caption_count() == 2 * s.train.items.size());
}

TEST_CASE("dataset splitting honors preassigned splits") {
    DatasetManifest m = sample_manifest(13);
    m.items[0].split = "test";
    m.items[5].split = "test";
    m.items[7].split = "test";
    SplitResult s = split_dataset(m, SplitRatios{}, 3);
    // 10 unassigned items: floor gives 8/1/1.
    CHECK(s.train.items.size() == 8);
    CHECK(s.val.items.size() == 1);
    CHECK(s.test.items.size() == 4);
    std::vector<long long> test_ids = ids_of(s.test);
    CHECK(std::find(test_ids.begin(), test_ids.end(), 0) != test_ids.end());
    CHECK(std::find(test_ids.begin(), test_ids.end(), 5) != test_ids.end());
    CHECK(std::find(test_ids.begin(), test_ids.end(), 7) != test_ids.end());

    CHECK_THROWS_AS(split_dataset(m, SplitRatios{0.5, 0.1, 0.1}, 3), Error);
    CHECK_THROWS_AS(split_dataset(m, SplitRatios{1.2, -0.1, -0.1}, 3), Error);
    try {
        split_dataset(m, SplitRatios{0.9, 0.2, 0.1}, 3);
        FAIL("expected ratio error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Config);
    }
}

TEST_CASE("binary PPM encoding round-trips within quantization") {
    ImageTensor img = random_image(7, 5, 21);
    std::vector<unsigned char> bytes = encode_ppm(img);
    CHECK(bytes == encode_ppm(img)); // byte-deterministic
    ImageTensor back = decode_ppm(bytes, "<memory>");
    REQUIRE(back.height == 7);
    REQUIRE(back.width == 5);
    for (std::size_t k = 0; k < img.data.size(); ++k)
        CHECK(std::abs(back.data[k] - img.data[k]) <= 0.5 / 255.0 + 1e-12);

    fs::path dir = fresh_dir("petlab_test_ppm");
    write_ppm(img, (dir / "x.ppm").string());
    ImageTensor from_disk = read_ppm((dir / "x.ppm").string());
    CHECK(from_disk.data == back.data);
}

TEST_CASE("PPM decoding handles comments and odd maxval") {
    std::string text = "P6 # comment\n# another comment\n 2 1 \n100\n";
    std::vector<unsigned char> bytes(text.begin(), text.end());
    for (unsigned char b : {50, 100, 0, 25, 75, 100}) bytes.push_back(b);
    ImageTensor img = decode_ppm(bytes, "<memory>");
    CHECK(img.at(0, 0, 0) == doctest::Approx(0.5));
    CHECK(img.at(0, 0, 1) == doctest::Approx(1.0));
    CHECK(img.at(0, 1, 0) == doctest::Approx(0.25));

    std::vector<unsigned char> bad = bytes;
    bad[1] = '5';
    CHECK_THROWS_AS(decode_ppm(bad, "<memory>"), Error);
    bytes.pop_back();
    CHECK_THROWS_AS(decode_ppm(bytes, "<memory>"), Error); // truncated

    std::string deep = "P6\n1 1\n65535\n";
    std::vector<unsigned char> deep_bytes(deep.begin(), deep.end());
    deep_bytes.insert(deep_bytes.end(), 6, 0);
    CHECK_THROWS_AS(decode_ppm(deep_bytes, "<memory>"), Error);

    CHECK_THROWS_AS(read_ppm("/nonexistent/file.ppm"), Error);
}

TEST_CASE("bilinear resize") {
    ImageTensor img = random_image(9, 6, 5);
    ImageTensor same = resize_bilinear(img, 9, 6);
    CHECK(same.data == img.data); // identity at equal size

    ImageTensor wide = ImageTensor::zeros(1, 2);
    for (int c = 0; c < 3; ++c) wide.data[3 + static_cast<std::size_t>(c)] = 1.0;
    ImageTensor up = resize_bilinear(wide, 1, 4);
    CHECK(up.at(0, 0, 0) == doctest::Approx(0.0));
    CHECK(up.at(0, 1, 0) == doctest::Approx(0.25));
    CHECK(up.at(0, 2, 0) == doctest::Approx(0.75));
    CHECK(up.at(0, 3, 0) == doctest::Approx(1.0));

    ImageTensor flat = ImageTensor::zeros(4, 4);
    for (std::size_t k = 0; k < flat.data.size(); ++k)
        flat.data[k] = k % 3 == 0 ? 0.2 : (k % 3 == 1 ? 0.5 : 0.8);
    ImageTensor scaled = resize_bilinear(flat, 11, 3);
    for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 3; ++x) {
            CHECK(scaled.at(y, x, 0) == doctest::Approx(0.2));
            CHECK(scaled.at(y, x, 2) == doctest::Approx(0.8));
        }

    ImageTensor big = resize_bilinear(random_image(50, 40, 6), 22, 22);
    CHECK(big.height == 22);
    CHECK(big.width == 22);

    CHECK_THROWS_AS(resize_bilinear(img, 0, 5), Error);
}

TEST_CASE("image preprocessing resizes then normalizes per channel") {
    ImageTensor img = random_image(16, 16, 8);
    NormalizationConstants norm;
    norm.mean = {0.5, 0.25, 0.0};
    norm.stddev = {2.0, 1.0, 4.0};
    ImageTensor out = preprocess_image(img, 16, norm);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            CHECK(out.at(y, x, 0) == doctest::Approx((img.at(y, x, 0) - 0.5) / 2.0));
            CHECK(out.at(y, x, 1) == doctest::Approx(img.at(y, x, 1) - 0.25));
            CHECK(out.at(y, x, 2) == doctest::Approx(img.at(y, x, 2) / 4.0));
        }

    NormalizationConstants backbone = NormalizationConstants::backbone();
    CHECK(backbone.mean[0] == doctest::Approx(0.48145466));
    CHECK(backbone.stddev[2] == doctest::Approx(0.27577711));
    CHECK(NormalizationConstants::identity().mean[1] == 0.0);

    NormalizationConstants bad;
    bad.stddev = {1.0, 0.0, 1.0};
    CHECK_THROWS_AS(preprocess_image(img, 16, bad), Error);
}

TEST_CASE("tokenization wraps words with sentence markers") {
    Vocab v = handmade_vocab();
    CHECK(tokenize("Two planes", v, 77) == std::vector<int>{1, 5, 9, 2});
    CHECK(tokenize("two unknownword planes", v, 77) == std::vector<int>{1, 5, 0, 9, 2});
    CHECK(tokenize("  two   planes  ", v, 77) == std::vector<int>{1, 5, 9, 2});

    std::string long_text;
    for (int i = 0; i < 100; ++i) long_text += "two ";
    std::vector<int> truncated = tokenize(long_text, v, 8);
    REQUIRE(truncated.size() == 8);
    CHECK(truncated.front() == Vocab::kBos);
    CHECK(truncated.back() == Vocab::kEos);
    for (std::size_t i = 1; i + 1 < truncated.size(); ++i) CHECK(truncated[i] == 5);

    CHECK_THROWS_AS(tokenize("", v, 77), Error);
    CHECK_THROWS_AS(tokenize("   \t\n ", v, 77), Error);
    CHECK_THROWS_AS(tokenize("two", v, 2), Error);
}

TEST_CASE("detokenization inverts tokenization on known words") {
    Vocab v = handmade_vocab();
    CHECK(detokenize(tokenize("TWO \t Planes", v, 77), v) == "two planes");
    CHECK(detokenize(tokenize("Two planes", v, 77), v) == "two planes");
    CHECK(detokenize(tokenize("strange Two", v, 77), v) == "<unk> two");
    CHECK(detokenize({1, 9, 2}, v) == "planes");
    CHECK(detokenize({1, 0, 2}, v) == "<unk>");
    CHECK_THROWS_AS(detokenize({1, 99, 2}, v), Error);
    CHECK_THROWS_AS(detokenize({-1}, v), Error);
}

TEST_CASE("vocabulary construction ranks by frequency then alphabetically") {
    Vocab v = Vocab::build({"b a", "a c", "c"});
    REQUIRE(v.size() == 6);
    CHECK(v.words[3] == "a");
    CHECK(v.words[4] == "c");
    CHECK(v.words[5] == "b");
    CHECK(v.id_of("a") == 3);
    CHECK(v.id_of("zzz") == Vocab::kUnk);

    Vocab capped = Vocab::build({"b a", "a c", "c"}, 4);
    CHECK(capped.size() == 4);
    CHECK(capped.words[3] == "a");
    CHECK_THROWS_AS(Vocab::build({"a"}, 3), Error);

    fs::path dir = fresh_dir("petlab_test_vocab");
    v.save((dir / "vocab.json").string());
    Vocab loaded = Vocab::load((dir / "vocab.json").string());
    CHECK(loaded.words == v.words);
    CHECK(loaded.id_of("b") == 5);

    std::ofstream((dir / "bad.json").string()) << R"({"words": ["<unk>", "x"]})";
    CHECK_THROWS_AS(Vocab::load((dir / "bad.json").string()), Error);
    std::ofstream((dir / "dup.json").string())
        << R"({"words": ["<unk>", "<bos>", "<eos>", "x", "x"]})";
    CHECK_THROWS_AS(Vocab::load((dir / "dup.json").string()), Error);
}

TEST_CASE("toy dataset counts, determinism and separability") {
    ToyDatasetConfig cfg;
    cfg.n_classes = 8;
    cfg.items_per_class = 25;
    cfg.captions_per_image = 5;
    cfg.image_size = 8;
    cfg.noise_std = 0.05;
    cfg.seed = 11;
    ToyDataset toy = synthesize_toy_dataset(cfg);
    CHECK(toy.manifest.items.size() == 200);
    CHECK(toy.manifest.caption_count() == 1000);
    CHECK(toy.images.size() == 200);
    CHECK(toy.class_of_item.size() == 200);

    ToyDataset again = synthesize_toy_dataset(cfg);
    for (std::size_t i = 0; i < toy.images.size(); ++i)
        CHECK(toy.images[i].data == again.images[i].data);
    for (std::size_t i = 0; i < toy.manifest.items.size(); ++i)
        CHECK(toy.manifest.items[i].captions == again.manifest.items[i].captions);
    CHECK(toy.vocab.words == again.vocab.words);

    // Zero noise collapses each class onto its prototype.
    ToyDatasetConfig flat = cfg;
    flat.noise_std = 0.0;
    flat.items_per_class = 3;
    ToyDataset proto = synthesize_toy_dataset(flat);
    CHECK(proto.images[0].data == proto.images[1].data);
    CHECK(proto.images[0].data == proto.images[2].data);
    CHECK(proto.images[0].data != proto.images[3].data); // next class differs

    // Nearest-prototype classification of the noisy set is perfect.
    ToyDatasetConfig one = cfg;
    one.items_per_class = 1;
    one.noise_std = 0.0;
    ToyDataset prototypes = synthesize_toy_dataset(one);
    for (std::size_t i = 0; i < toy.images.size(); ++i) {
        int best = -1;
        double best_d = 1e300;
        for (int c = 0; c < cfg.n_classes; ++c) {
            double d = 0.0;
            for (std::size_t k = 0; k < toy.images[i].data.size(); ++k) {
                const double diff =
                    toy.images[i].data[k] - prototypes.images[static_cast<std::size_t>(c)].data[k];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        CHECK(best == toy.class_of_item[i]);
    }

    ToyDatasetConfig bad = cfg;
    bad.channels = 1;
    CHECK_THROWS_AS(synthesize_toy_dataset(bad), Error);
    bad = cfg;
    bad.noise_std = -0.1;
    CHECK_THROWS_AS(synthesize_toy_dataset(bad), Error);
    bad = cfg;
    bad.n_classes = 0;
    CHECK_THROWS_AS(synthesize_toy_dataset(bad), Error);
}

TEST_CASE("toy captions name exactly their own class") {
    ToyDatasetConfig cfg;
    cfg.n_classes = 4;
    cfg.items_per_class = 2;
    cfg.image_size = 4;
    cfg.seed = 3;
    ToyDataset toy = synthesize_toy_dataset(cfg);
    const std::vector<std::string> names = {"alpha", "bravo", "charlie", "delta"};
    for (std::size_t i = 0; i < toy.manifest.items.size(); ++i) {
        for (const std::string& caption : toy.manifest.items[i].captions) {
            std::vector<std::string> words = split_words(caption);
            for (int c = 0; c < cfg.n_classes; ++c) {
                const bool present =
                    std::find(words.begin(), words.end(), names[static_cast<std::size_t>(c)]) !=
                    words.end();
                CHECK(present == (c == toy.class_of_item[i]));
            }
        }
    }
    for (const std::string& name : names) CHECK(toy.vocab.id_of(name) != Vocab::kUnk);
}

TEST_CASE("toy dataset exports and reloads through the manifest") {
    ToyDatasetConfig cfg;
    cfg.n_classes = 3;
    cfg.items_per_class = 4;
    cfg.captions_per_image = 2;
    cfg.image_size = 6;
    cfg.seed = 19;
    ToyDataset toy = synthesize_toy_dataset(cfg);

    fs::path dir = fresh_dir("petlab_test_toy_export");
    export_toy_dataset(toy, dir.string());
    DatasetManifest manifest = load_manifest((dir / "manifest.json").string(), true);
    CHECK(manifest.items.size() == 12);
    Vocab vocab = Vocab::load((dir / "vocab.json").string());
    CHECK(vocab.words == toy.vocab.words);

    ImageTensor from_disk = read_ppm(manifest.items[0].image_path);
    REQUIRE(from_disk.data.size() == toy.images[0].data.size());
    for (std::size_t k = 0; k < from_disk.data.size(); ++k)
        CHECK(std::abs(from_disk.data[k] - toy.images[0].data[k]) <= 0.5 / 255.0 + 1e-12);

    RetrievalSplit split = prepare_split(manifest, disk_loader(), vocab, 16, 6,
                                         NormalizationConstants::identity());
    CHECK(split.images.size() == 12);
    CHECK(split.captions.size() == 24);
    CHECK(split.caption_to_image[3] == 1);
}

TEST_CASE("toy preparation yields encoder-ready splits") {
    ToyDatasetConfig cfg;
    cfg.n_classes = 4;
    cfg.items_per_class = 5;
    cfg.captions_per_image = 3;
    cfg.image_size = 8;
    cfg.seed = 23;
    ToyDataset toy = synthesize_toy_dataset(cfg);
    PreparedDataset prepared = prepare_toy(toy, SplitRatios{}, 5, 12, 16);

    CHECK(prepared.train.images.size() == 16);
    CHECK(prepared.val.images.size() == 2);
    CHECK(prepared.test.images.size() == 2);
    CHECK(prepared.train.captions.size() == 48);
    CHECK(prepared.train.images[0].height == 16);

    for (const std::vector<int>& caption : prepared.train.captions) {
        CHECK(caption.front() == Vocab::kBos);
        CHECK(caption.back() == Vocab::kEos);
        for (int id : caption) CHECK(id < prepared.vocab.size());
    }

    PreparedDataset again = prepare_toy(toy, SplitRatios{}, 5, 12, 16);
    CHECK(again.train.captions == prepared.train.captions);
    CHECK(again.train.images[0].data == prepared.train.images[0].data);
    CHECK(again.test.caption_to_image == prepared.test.caption_to_image);
}
