// include/rcscme/error.hpp

// Copyright 2026  The rcscme Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef RCSCME_ERROR_HPP_
#define RCSCME_ERROR_HPP_

#include <iostream>
#include <stdexcept>
#include <string>

namespace rcscme {

// Failure categories map onto the CLI exit codes (2, 3, 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class AdapterError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

namespace log {

inline bool &verbose() {
  static bool flag = false;
  return flag;
}

inline void warn(const std::string &msg) { std::cerr << "WARNING: " << msg << '\n'; }

inline void info(const std::string &msg) {
  if (verbose()) std::cerr << "LOG: " << msg << '\n';
}

}  // namespace log

}  // namespace rcscme

#endif  // RCSCME_ERROR_HPP_
