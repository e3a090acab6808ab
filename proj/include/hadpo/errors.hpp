#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hadpo {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration (vocabulary overflow, bad hyperparameters).
struct ConfigError : Error {
    using Error::Error;
};

// Caller supplied out-of-domain data (token out of vocabulary, empty input).
struct InputError : Error {
    using Error::Error;
};

struct CorrectionInfeasible : Error {
    using Error::Error;
};

struct DivergenceError : Error {
    DivergenceError(std::int64_t step, const std::string& what)
        : Error("training diverged at step " + std::to_string(step) + ": " + what), step(step) {}
    std::int64_t step;
};

struct TransportError : Error {
    using Error::Error;
};

// Remote reply that does not carry the expected structure; the raw body is kept.
struct ParseError : Error {
    ParseError(const std::string& what, std::string payload)
        : Error(what), payload(std::move(payload)) {}
    std::string payload;
};

struct StageError : Error {
    StageError(std::int64_t scene_id, const std::string& stage, const std::string& what)
        : Error("stage '" + stage + "' failed on scene " + std::to_string(scene_id) + ": " + what),
          scene_id(scene_id),
          stage(stage) {}
    std::int64_t scene_id;
    std::string stage;
};

}  // namespace hadpo
