/* Self-recursion compiles to a pc-relative call inside the function body,
 * so the extracted bytes need no rewriting. */
long recursive_fibonacci(long n) {
  if (n < 2)
    return n;
  return recursive_fibonacci(n - 1) + recursive_fibonacci(n - 2);
}
