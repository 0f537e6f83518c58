#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdks/grid.hpp"
#include "tdks/tdks_forward.hpp"

namespace tdks {

inline constexpr const char* kContainerFormat = "tdks-container";
inline constexpr int kContainerVersion = 1;

/**
 * Self-describing binary file: an 8-byte little-endian header length, a JSON
 * header, then every array as raw little-endian IEEE-754 doubles in header
 * order, row-major. Complex arrays carry a trailing dimension of 2 (re, im).
 */
class Container {
public:
    struct Array {
        std::vector<std::int64_t> shape;
        std::vector<double> data;
    };

    std::string kind;
    nlohmann::json grid = nullptr;
    nlohmann::json provenance = nlohmann::json::object();
    std::string config_hash;
    std::string data_hash;
    nlohmann::json meta = nlohmann::json::object();

    void put(const std::string& name, std::vector<std::int64_t> shape, std::vector<double> data);
    void put(const std::string& name, const RealVector& v);
    void put(const std::string& name, const RowMatrix& m);
    void put(const std::string& name, const ComplexVector& v);
    void put(const std::string& name, const ComplexRowMatrix& m);

    bool has(const std::string& name) const { return arrays_.count(name) > 0; }
    const Array& array(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }

    RealVector real_vector(const std::string& name) const;
    RowMatrix real_matrix(const std::string& name) const;
    ComplexVector complex_vector(const std::string& name) const;
    ComplexRowMatrix complex_matrix(const std::string& name) const;

    nlohmann::json header() const;

private:
    std::vector<std::string> order_;
    std::map<std::string, Array> arrays_;
};

nlohmann::json grid_to_json(const GridSpec& grid);
GridSpec grid_from_json(const nlohmann::json& j);

/// Writes to a temporary file in the same directory, then renames it into place.
void write_container(const std::filesystem::path& path, const Container& c);

/// Throws std::runtime_error naming the file on any format violation.
Container read_container(const std::filesystem::path& path);

/// Writes text atomically (temporary file + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace tdks
