/*
Copyright 2026 The trackdiff Authors. All rights reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#pragma once

#include <stdexcept>
#include <string>

namespace trackdiff {

// Every failure in the library surfaces as one of these. The message carries
// the stable, test-visible phrase ("empty corpus", "row count", ...).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed bytes in one of the on-disk formats (score, checkpoint, SMF, ...).
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(what) {}
};

// Artifacts that are individually valid but do not fit together
// (checkpoint K vs vocabulary K, config vs parameter blob).
class CompatibilityError : public Error {
 public:
  explicit CompatibilityError(const std::string& what) : Error(what) {}
};

}  // namespace trackdiff
