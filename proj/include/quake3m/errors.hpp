#pragma once

#include <stdexcept>
#include <string>

namespace quake3m {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration problems (bad config file, bad flag combination).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace quake3m
