#include "pointcra/pcio.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace pointcra {

using nlohmann::json;

PointCloud read_point_cloud(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("read_point_cloud: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("read_point_cloud: empty file " + path);

    std::istringstream hs(line);
    std::string tag, kw_dims, kw_labeled;
    long long n = -1, c = -1;
    int labeled = -1;
    hs >> tag >> n >> kw_dims >> c >> kw_labeled >> labeled;
    if (!hs || tag != "#pts" || kw_dims != "dims" || kw_labeled != "labeled" ||
        n < 1 || c < 0 || (labeled != 0 && labeled != 1)) {
        throw std::invalid_argument("read_point_cloud: malformed header '" + line + "'");
    }

    PointCloud pc;
    pc.n = int(n);
    pc.c = int(c);
    pc.positions.resize(std::size_t(n) * 3);
    pc.features.resize(std::size_t(n) * c);
    if (labeled) pc.labels.resize(std::size_t(n));

    for (long long i = 0; i < n; ++i) {
        if (!std::getline(in, line))
            throw std::invalid_argument("read_point_cloud: truncated at point " + std::to_string(i));
        std::istringstream ls(line);
        for (int t = 0; t < 3; ++t)
            if (!(ls >> pc.positions[std::size_t(i) * 3 + t]))
                throw std::invalid_argument("read_point_cloud: bad coordinate at point " + std::to_string(i));
        for (long long d = 0; d < c; ++d)
            if (!(ls >> pc.features[std::size_t(i) * c + d]))
                throw std::invalid_argument("read_point_cloud: bad feature at point " + std::to_string(i));
        if (labeled && !(ls >> pc.labels[std::size_t(i)]))
            throw std::invalid_argument("read_point_cloud: bad label at point " + std::to_string(i));
    }
    pc.validate();
    return pc;
}

void write_point_cloud(const std::string& path, const PointCloud& cloud) {
    cloud.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_point_cloud: cannot open " + path);
    out << "#pts " << cloud.n << " dims " << cloud.c << " labeled " << (cloud.labeled() ? 1 : 0)
        << "\n";
    char buf[40];
    for (int i = 0; i < cloud.n; ++i) {
        for (int t = 0; t < 3; ++t) {
            std::snprintf(buf, sizeof buf, "%.17g", cloud.positions[std::size_t(i) * 3 + t]);
            out << (t ? " " : "") << buf;
        }
        for (int d = 0; d < cloud.c; ++d) {
            std::snprintf(buf, sizeof buf, "%.17g", cloud.features[std::size_t(cloud.c) * i + d]);
            out << ' ' << buf;
        }
        if (cloud.labeled()) out << ' ' << cloud.labels[std::size_t(i)];
        out << '\n';
    }
    if (!out) throw std::runtime_error("write_point_cloud: write failed for " + path);
}

void write_array_bundle(const std::string& path, const std::vector<NamedArray>& arrays) {
    json manifest = json::array();
    for (const auto& a : arrays) {
        std::size_t count = 1;
        for (auto d : a.shape) count *= std::size_t(d);
        if (count != a.data.size())
            throw std::invalid_argument("write_array_bundle: shape/data mismatch for " + a.name);
        manifest.push_back({{"name", a.name}, {"shape", a.shape}});
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_array_bundle: cannot open " + path);
    out << json{{"arrays", manifest}}.dump() << '\n';
    for (const auto& a : arrays)
        out.write(reinterpret_cast<const char*>(a.data.data()),
                  std::streamsize(a.data.size() * sizeof(double)));
    if (!out) throw std::runtime_error("write_array_bundle: write failed for " + path);
}

std::vector<NamedArray> read_array_bundle(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("read_array_bundle: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("read_array_bundle: missing manifest");
    json manifest = json::parse(line);
    std::vector<NamedArray> arrays;
    for (const auto& e : manifest.at("arrays")) {
        NamedArray a;
        a.name = e.at("name").get<std::string>();
        a.shape = e.at("shape").get<std::vector<std::int64_t>>();
        std::size_t count = 1;
        for (auto d : a.shape) count *= std::size_t(d);
        a.data.resize(count);
        in.read(reinterpret_cast<char*>(a.data.data()), std::streamsize(count * sizeof(double)));
        if (!in) throw std::invalid_argument("read_array_bundle: truncated data for " + a.name);
        arrays.push_back(std::move(a));
    }
    return arrays;
}

}  // namespace pointcra
