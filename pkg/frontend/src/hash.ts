/** FNV-1a 64-bit over UTF-8 text, as a fixed-width hex string.
 *
 * Used to fingerprint raw API response bytes so the UI can show when a
 * parameter change actually produced a different payload. Not
 * cryptographic.
 */

const FNV_OFFSET = 0xcbf29ce484222325n;
const FNV_PRIME = 0x00000100000001b3n;
const MASK64 = 0xffffffffffffffffn;

export function fnv1a64Hex(text: string): string {
  const bytes = new TextEncoder().encode(text);
  let h = FNV_OFFSET;
  for (const b of bytes) {
    h = ((h ^ BigInt(b)) * FNV_PRIME) & MASK64;
  }
  return h.toString(16).padStart(16, "0");
}
