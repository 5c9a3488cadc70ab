#pragma once

#define USBL_VERSION_STRING "0.1.0"
