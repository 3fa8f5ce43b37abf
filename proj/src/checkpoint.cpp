#include "petlab/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "json_util.hpp"
#include "petlab/error.hpp"
#include "petlab/petl.hpp"

namespace petlab::ckpt {

namespace {

constexpr char kMagic[4] = {'P', 'T', 'L', 'B'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in.good()) throw_input(path + ": truncated checkpoint");
    return value;
}

} // namespace

void save_checkpoint(const DualEncoderModel& model, const std::string& path) {
    using nlohmann::json;
    json header;
    header["format_version"] = kVersion;
    header["encoder"] = jsonutil::encoder_to_json(model.config);
    header["init_seed"] = model.init.seed;
    if (model.petl)
        header["strategy"] = jsonutil::strategy_to_json(model.petl->strategy);
    json dir = json::array();
    for (const ParamStore::Entry& e : model.params.entries())
        dir.push_back(json{{"name", e.name},
                           {"rows", e.var.rows()},
                           {"cols", e.var.cols()},
                           {"trainable", e.var.requires_grad()}});
    header["tensors"] = std::move(dir);
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw_io("cannot open " + path + " for writing");
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint64_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    std::vector<double> row;
    for (const ParamStore::Entry& e : model.params.entries()) {
        const ag::Matrix& m = e.var.value();
        row.resize(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
            out.write(reinterpret_cast<const char*>(row.data()),
                      static_cast<std::streamsize>(row.size() * sizeof(double)));
        }
    }
    if (!out.good()) throw_io("failed writing " + path);
}

DualEncoderModel load_checkpoint(const std::string& path) {
    using nlohmann::json;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_io("cannot open " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in.good() || std::memcmp(magic, kMagic, 4) != 0)
        throw_input(path + ": not a checkpoint file");
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != kVersion)
        throw_input(path + ": unsupported checkpoint version " + std::to_string(version));
    const auto header_len = read_pod<std::uint64_t>(in, path);
    if (header_len > (1u << 26)) throw_input(path + ": implausible header length");
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in.good()) throw_input(path + ": truncated checkpoint");

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw_input(path + ": bad checkpoint header: " + e.what());
    }
    if (!header.contains("encoder") || !header.contains("tensors"))
        throw_input(path + ": incomplete checkpoint header");

    const EncoderConfig config = jsonutil::encoder_from_json(header["encoder"], path);
    InitSpec init;
    init.seed = header.value("init_seed", std::uint64_t{0});
    init.zeros = true; // values come from the payload
    DualEncoderModel model = DualEncoderModel::build(config, init);
    if (header.contains("strategy"))
        petl::attach_strategy(model, jsonutil::strategy_from_json(header["strategy"], path));

    const json& dir = header["tensors"];
    if (!dir.is_array() || dir.size() != model.params.entries().size())
        throw_input(path + ": tensor directory does not match the rebuilt model");
    std::vector<double> row;
    for (std::size_t i = 0; i < dir.size(); ++i) {
        const json& d = dir[i];
        ParamStore::Entry& e = model.params.entries()[i];
        if (d.value("name", "") != e.name)
            throw_input(path + ": tensor " + std::to_string(i) + " is '" +
                        d.value("name", "") + "', expected '" + e.name + "'");
        if (d.value("rows", -1) != e.var.rows() || d.value("cols", -1) != e.var.cols())
            throw_input(path + ": shape mismatch for tensor " + e.name);
        if (d.value("trainable", false) != e.var.requires_grad())
            throw_input(path + ": trainable flag mismatch for tensor " + e.name);
        ag::Matrix& m = e.var.mutable_value();
        row.resize(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            in.read(reinterpret_cast<char*>(row.data()),
                    static_cast<std::streamsize>(row.size() * sizeof(double)));
            if (!in.good()) throw_input(path + ": truncated tensor payload for " + e.name);
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = row[static_cast<std::size_t>(c)];
        }
    }
    return model;
}

} // namespace petlab::ckpt
