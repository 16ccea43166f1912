/*
Copyright 2026 The howlkit Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS-IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#ifndef HOWLKIT_ERRORS_HPP_
#define HOWLKIT_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace howlkit {

// Every error raised by the library derives from Error. The CLI maps each
// subclass to its own exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or argument values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File could not be opened, read, written, or parsed.
class IoError : public Error {
 public:
  using Error::Error;
};

// Mismatched vector/matrix/frame shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones were required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace howlkit

#endif  // HOWLKIT_ERRORS_HPP_
