#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace pcpmae {

inline std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

// One run, one manifest. Written atomically at run end; per-epoch rows are
// flushed to a .partial sidecar while the run is in flight.
struct RunManifest {
    std::string command;
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::string started_at;
    std::string finished_at;
    nlohmann::json metrics = nlohmann::json::array();
    std::vector<std::string> outputs;
    nlohmann::json extra = nlohmann::json::object();

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["command"] = command;
        j["config"] = config;
        j["seed"] = seed;
        j["started_at"] = started_at;
        j["finished_at"] = finished_at;
        j["metrics"] = metrics;
        j["outputs"] = outputs;
        j["extra"] = extra;
        return j;
    }

    // Timestamp-free form for reproducibility comparisons.
    nlohmann::json stable_json() const {
        auto j = to_json();
        j.erase("started_at");
        j.erase("finished_at");
        return j;
    }
};

inline void write_text_atomic(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
        out << text;
        if (!out) throw std::runtime_error("write failure on '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline void write_manifest(const RunManifest& m, const std::string& path) {
    write_text_atomic(path, m.to_json().dump(2) + "\n");
}

inline RunManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest '" + path + "'");
    nlohmann::json j = nlohmann::json::parse(in);
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.started_at = j.value("started_at", "");
    m.finished_at = j.value("finished_at", "");
    m.metrics = j.at("metrics");
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    m.extra = j.value("extra", nlohmann::json::object());
    return m;
}

inline constexpr const char* kMetricsCsvHeader = "epoch,loss,loss_pc,loss_recon,lr";

inline std::string metrics_to_csv(const nlohmann::json& metrics) {
    std::string csv = std::string(kMetricsCsvHeader) + "\n";
    char buf[160];
    for (const auto& row : metrics) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g\n", row.at("epoch").get<int>(),
                      row.at("loss").get<double>(), row.at("loss_pc").get<double>(),
                      row.at("loss_recon").get<double>(), row.at("lr").get<double>());
        csv += buf;
    }
    return csv;
}

// Incremental sidecar for runs in flight; replaced wholesale on each flush
// so readers never see a torn row.
class PartialFlusher {
public:
    explicit PartialFlusher(std::string path) : path_(std::move(path)) {}

    void flush(const nlohmann::json& metrics) const {
        write_text_atomic(path_, metrics_to_csv(metrics));
    }

    void remove() const {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }

    const std::string& path() const { return path_; }

private:
    std::string path_;
};

}  // namespace pcpmae
