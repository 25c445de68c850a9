// Copyright (c) 2026 The paragen authors
// SPDX-License-Identifier: Apache-2.0
//
// Versioned named-tensor container: a JSON header (config record + tensor
// manifest) followed by raw little-endian f64 payloads. Shared by model,
// generator and adapter files.
#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "paragen/tensor.hpp"

namespace paragen {

static_assert(std::endian::native == std::endian::little, "checkpoint container assumes a little-endian host");

class Checkpoint {
public:
    static constexpr uint32_t kVersion = 1;
    static constexpr char kMagic[8] = {'P', 'G', 'T', 'E', 'N', 'S', '0', '\n'};

    nlohmann::json config;

    void add(const std::string& name, const Tensor& t) {
        for (auto& [n, _] : tensors_)
            if (n == name) throw std::invalid_argument("Checkpoint::add: duplicate tensor name " + name);
        tensors_.emplace_back(name, t);
    }

    const std::vector<std::pair<std::string, Tensor>>& tensors() const { return tensors_; }

    const Tensor* find(const std::string& name) const {
        for (auto& [n, t] : tensors_)
            if (n == name) return &t;
        return nullptr;
    }

    Tensor require(const std::string& name) const {
        const Tensor* t = find(name);
        if (!t) throw std::runtime_error("Checkpoint: missing tensor " + name);
        return *t;
    }

    void save(const std::string& path) const {
        nlohmann::json header;
        header["version"] = kVersion;
        header["config"] = config;
        auto& manifest = header["tensors"] = nlohmann::json::array();
        for (auto& [name, t] : tensors_) {
            manifest.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f64"}});
        }
        const std::string hs = header.dump();
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("Checkpoint::save: cannot open " + path);
        f.write(kMagic, sizeof(kMagic));
        const uint64_t hlen = hs.size();
        f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
        f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        for (auto& [name, t] : tensors_)
            f.write(reinterpret_cast<const char*>(t.data().data()),
                    static_cast<std::streamsize>(t.data().size() * sizeof(double)));
        if (!f) throw std::runtime_error("Checkpoint::save: write failed for " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("Checkpoint::load: cannot open " + path);
        char magic[sizeof(kMagic)];
        f.read(magic, sizeof(magic));
        if (!f || std::string(magic, sizeof(magic)) != std::string(kMagic, sizeof(kMagic)))
            throw std::runtime_error("Checkpoint::load: bad magic in " + path);
        uint64_t hlen = 0;
        f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
        std::string hs(hlen, '\0');
        f.read(hs.data(), static_cast<std::streamsize>(hlen));
        if (!f) throw std::runtime_error("Checkpoint::load: truncated header in " + path);
        nlohmann::json header = nlohmann::json::parse(hs);
        if (header.at("version").get<uint32_t>() != kVersion)
            throw std::runtime_error("Checkpoint::load: unsupported container version in " + path);
        Checkpoint ck;
        ck.config = header.value("config", nlohmann::json::object());
        for (auto& entry : header.at("tensors")) {
            if (entry.at("dtype").get<std::string>() != "f64")
                throw std::runtime_error("Checkpoint::load: unsupported dtype in " + path);
            std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
            int64_t n = 1;
            for (int d : shape) n *= d;
            std::vector<double> data(static_cast<size_t>(n));
            f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
            if (!f) throw std::runtime_error("Checkpoint::load: truncated payload in " + path);
            ck.tensors_.emplace_back(entry.at("name").get<std::string>(), Tensor::from(shape, std::move(data)));
        }
        return ck;
    }

private:
    std::vector<std::pair<std::string, Tensor>> tensors_;
};

}  // namespace paragen
