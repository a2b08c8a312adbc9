#include <string.h>

int check_password(char* input) {
  char password[] = "topsecret123";
  return !strcmp(input, password);
}
