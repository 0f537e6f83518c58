#include "tdks/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

namespace tdks {

namespace {

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw std::invalid_argument("container: negative dimension");
        n *= d;
    }
    return n;
}

void to_little_endian(std::uint64_t& bits) {
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
}

void append_u64(std::string& out, std::uint64_t v) {
    to_little_endian(v);
    char buf[8];
    std::memcpy(buf, &v, 8);
    out.append(buf, 8);
}

void append_doubles(std::string& out, const std::vector<double>& values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
    } else {
        for (double v : values) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            append_u64(out, bits);
        }
    }
}

}  // namespace

void Container::put(const std::string& name, std::vector<std::int64_t> shape,
                    std::vector<double> data) {
    if (element_count(shape) != static_cast<std::int64_t>(data.size())) {
        throw std::invalid_argument(fmt::format("container: array '{}' shape does not match data",
                                                name));
    }
    if (!has(name)) order_.push_back(name);
    arrays_[name] = Array{std::move(shape), std::move(data)};
}

void Container::put(const std::string& name, const RealVector& v) {
    put(name, {v.size()}, std::vector<double>(v.data(), v.data() + v.size()));
}

void Container::put(const std::string& name, const RowMatrix& m) {
    put(name, {m.rows(), m.cols()}, std::vector<double>(m.data(), m.data() + m.size()));
}

void Container::put(const std::string& name, const ComplexVector& v) {
    const double* p = reinterpret_cast<const double*>(v.data());
    put(name, {v.size(), 2}, std::vector<double>(p, p + 2 * v.size()));
}

void Container::put(const std::string& name, const ComplexRowMatrix& m) {
    const double* p = reinterpret_cast<const double*>(m.data());
    put(name, {m.rows(), m.cols(), 2}, std::vector<double>(p, p + 2 * m.size()));
}

const Container::Array& Container::array(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) {
        throw std::runtime_error(fmt::format("container ({}): missing array '{}'", kind, name));
    }
    return it->second;
}

RealVector Container::real_vector(const std::string& name) const {
    const Array& a = array(name);
    if (a.shape.size() != 1) throw std::runtime_error(fmt::format("array '{}' is not a vector", name));
    return Eigen::Map<const RealVector>(a.data.data(), a.shape[0]);
}

RowMatrix Container::real_matrix(const std::string& name) const {
    const Array& a = array(name);
    if (a.shape.size() != 2) throw std::runtime_error(fmt::format("array '{}' is not a matrix", name));
    return Eigen::Map<const RowMatrix>(a.data.data(), a.shape[0], a.shape[1]);
}

ComplexVector Container::complex_vector(const std::string& name) const {
    const Array& a = array(name);
    if (a.shape.size() != 2 || a.shape[1] != 2) {
        throw std::runtime_error(fmt::format("array '{}' is not a complex vector", name));
    }
    return Eigen::Map<const ComplexVector>(
        reinterpret_cast<const std::complex<double>*>(a.data.data()), a.shape[0]);
}

ComplexRowMatrix Container::complex_matrix(const std::string& name) const {
    const Array& a = array(name);
    if (a.shape.size() != 3 || a.shape[2] != 2) {
        throw std::runtime_error(fmt::format("array '{}' is not a complex matrix", name));
    }
    return Eigen::Map<const ComplexRowMatrix>(
        reinterpret_cast<const std::complex<double>*>(a.data.data()), a.shape[0], a.shape[1]);
}

nlohmann::json Container::header() const {
    nlohmann::json h;
    h["format"] = kContainerFormat;
    h["version"] = kContainerVersion;
    h["kind"] = kind;
    h["dtype"] = "f64-le";
    h["fs_per_au"] = kFsPerAu;
    h["grid"] = grid;
    h["provenance"] = provenance;
    h["config_hash"] = config_hash;
    h["data_hash"] = data_hash;
    h["meta"] = meta;
    nlohmann::json arrays = nlohmann::json::array();
    for (const auto& name : order_) {
        arrays.push_back({{"name", name}, {"shape", arrays_.at(name).shape}});
    }
    h["arrays"] = arrays;
    return h;
}

nlohmann::json grid_to_json(const GridSpec& g) {
    return {{"l_min", g.l_min}, {"l_max", g.l_max}, {"J", g.J}, {"dx", g.dx},
            {"T", g.T},         {"K", g.K},         {"dt", g.dt}};
}

GridSpec grid_from_json(const nlohmann::json& j) {
    GridSpec g;
    g.l_min = j.at("l_min").get<double>();
    g.l_max = j.at("l_max").get<double>();
    g.J = j.at("J").get<int>();
    g.dx = j.at("dx").get<double>();
    g.T = j.at("T").get<double>();
    g.K = j.at("K").get<int>();
    g.dt = j.at("dt").get<double>();
    return g;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", tmp.string()));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.flush();
        if (!out) throw std::runtime_error(fmt::format("write to '{}' failed", tmp.string()));
    }
    std::filesystem::rename(tmp, path);
}

void write_container(const std::filesystem::path& path, const Container& c) {
    const std::string header = c.header().dump();
    std::string blob;
    std::size_t payload = 0;
    for (const auto& name : c.names()) payload += c.array(name).data.size() * sizeof(double);
    blob.reserve(8 + header.size() + payload);
    append_u64(blob, header.size());
    blob += header;
    for (const auto& name : c.names()) append_doubles(blob, c.array(name).data);
    write_text_atomic(path, blob);
}

Container read_container(const std::filesystem::path& path) {
    const std::string where = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("{}: cannot open", where));
    const auto size = std::filesystem::file_size(path);
    if (size < 8) throw std::runtime_error(fmt::format("{}: too short to be a container", where));

    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), 8);
    to_little_endian(header_len);
    if (header_len > size - 8) throw std::runtime_error(fmt::format("{}: header length exceeds file", where));
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));

    nlohmann::json h;
    try {
        h = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(fmt::format("{}: header is not valid JSON ({})", where, e.what()));
    }
    if (h.value("format", "") != kContainerFormat) {
        throw std::runtime_error(fmt::format("{}: not a {} file", where, kContainerFormat));
    }
    const int version = h.value("version", -1);
    if (version != kContainerVersion) {
        throw std::runtime_error(fmt::format(
            "{}: container version {} is not supported (this build reads version {}); "
            "regenerate the file with this build",
            where, version, kContainerVersion));
    }
    if (h.value("dtype", "") != "f64-le") {
        throw std::runtime_error(fmt::format("{}: unsupported dtype", where));
    }

    Container c;
    c.kind = h.at("kind").get<std::string>();
    c.grid = h.at("grid");
    c.provenance = h.at("provenance");
    c.config_hash = h.at("config_hash").get<std::string>();
    c.data_hash = h.at("data_hash").get<std::string>();
    c.meta = h.at("meta");

    std::uint64_t expected = 0;
    std::vector<std::pair<std::string, std::vector<std::int64_t>>> decl;
    for (const auto& a : h.at("arrays")) {
        auto shape = a.at("shape").get<std::vector<std::int64_t>>();
        expected += static_cast<std::uint64_t>(element_count(shape)) * sizeof(double);
        decl.emplace_back(a.at("name").get<std::string>(), std::move(shape));
    }
    if (expected != size - 8 - header_len) {
        throw std::runtime_error(fmt::format(
            "{}: payload is {} bytes but the header declares {}", where, size - 8 - header_len,
            expected));
    }
    for (auto& [name, shape] : decl) {
        std::vector<double> data(static_cast<std::size_t>(element_count(shape)));
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if constexpr (std::endian::native == std::endian::big) {
            for (double& v : data) {
                std::uint64_t bits;
                std::memcpy(&bits, &v, 8);
                to_little_endian(bits);
                std::memcpy(&v, &bits, 8);
            }
        }
        c.put(name, std::move(shape), std::move(data));
    }
    if (!in) throw std::runtime_error(fmt::format("{}: truncated payload", where));
    return c;
}

}  // namespace tdks
