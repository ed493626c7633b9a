#include "chaosib/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace chaosib {

using json = nlohmann::json;

void save_checkpoint(const std::string& path, json manifest,
                     const std::vector<std::pair<std::string, const ad::Tensor*>>& params) {
    json plist = json::array();
    for (const auto& [name, t] : params) {
        plist.push_back({{"name", name}, {"rows", t->rows}, {"cols", t->cols}});
    }
    manifest["params"] = std::move(plist);
    const std::string header = manifest.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, t] : params) {
        out.write(reinterpret_cast<const char*>(t->v.data()),
                  static_cast<std::streamsize>(t->v.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in) throw std::runtime_error("load_checkpoint: truncated header in " + path);
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("load_checkpoint: truncated header in " + path);

    Checkpoint ck;
    ck.manifest = json::parse(header);
    for (const auto& p : ck.manifest.at("params")) {
        const std::string name = p.at("name").get<std::string>();
        ad::Tensor t(p.at("rows").get<std::size_t>(), p.at("cols").get<std::size_t>());
        in.read(reinterpret_cast<char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(double)));
        if (!in) throw std::runtime_error("load_checkpoint: truncated payload in " + path);
        ck.params.emplace_back(name, std::move(t));
    }
    return ck;
}

}  // namespace chaosib
