#![allow(dead_code)]

//! Keccak-f[1600], SHA3-256 and RFC 4648 base32 written from the standards,
//! used to build v3 onion labels without the crate under test.

const RC: [u64; 24] = [
    0x0000000000000001, 0x0000000000008082, 0x800000000000808A, 0x8000000080008000,
    0x000000000000808B, 0x0000000080000001, 0x8000000080008081, 0x8000000000008009,
    0x000000000000008A, 0x0000000000000088, 0x0000000080008009, 0x000000008000000A,
    0x000000008000808B, 0x800000000000008B, 0x8000000000008089, 0x8000000000008003,
    0x8000000000008002, 0x8000000000000080, 0x000000000000800A, 0x800000008000000A,
    0x8000000080008081, 0x8000000000008080, 0x0000000080000001, 0x8000000080008008,
];
const ROT: [[u32; 5]; 5] = [
    [0, 36, 3, 41, 18],
    [1, 44, 10, 45, 2],
    [62, 6, 43, 15, 61],
    [28, 55, 25, 21, 56],
    [27, 20, 39, 8, 14],
];

fn keccak_f(a: &mut [[u64; 5]; 5]) {
    for rc in RC {
        let mut c = [0u64; 5];
        for x in 0..5 {
            c[x] = a[x][0] ^ a[x][1] ^ a[x][2] ^ a[x][3] ^ a[x][4];
        }
        for x in 0..5 {
            let d = c[(x + 4) % 5] ^ c[(x + 1) % 5].rotate_left(1);
            for y in 0..5 {
                a[x][y] ^= d;
            }
        }
        let mut b = [[0u64; 5]; 5];
        for x in 0..5 {
            for y in 0..5 {
                b[y][(2 * x + 3 * y) % 5] = a[x][y].rotate_left(ROT[x][y]);
            }
        }
        for x in 0..5 {
            for y in 0..5 {
                a[x][y] = b[x][y] ^ (!b[(x + 1) % 5][y] & b[(x + 2) % 5][y]);
            }
        }
        a[0][0] ^= rc;
    }
}

pub fn sha3_256(msg: &[u8]) -> [u8; 32] {
    const RATE: usize = 136;
    let mut padded = msg.to_vec();
    padded.push(0x06);
    while padded.len() % RATE != 0 {
        padded.push(0);
    }
    *padded.last_mut().unwrap() |= 0x80;
    let mut a = [[0u64; 5]; 5];
    for block in padded.chunks(RATE) {
        for (i, lane) in block.chunks(8).enumerate() {
            let (x, y) = (i % 5, i / 5);
            a[x][y] ^= u64::from_le_bytes(lane.try_into().unwrap());
        }
        keccak_f(&mut a);
    }
    let mut out = [0u8; 32];
    for i in 0..4 {
        out[i * 8..i * 8 + 8].copy_from_slice(&a[i % 5][i / 5].to_le_bytes());
    }
    out
}

pub fn base32_lower(bytes: &[u8]) -> String {
    const ALPHA: &[u8] = b"abcdefghijklmnopqrstuvwxyz234567";
    let mut out = String::new();
    let (mut buf, mut bits) = (0u32, 0);
    for &b in bytes {
        buf = (buf << 8) | b as u32;
        bits += 8;
        while bits >= 5 {
            bits -= 5;
            out.push(ALPHA[((buf >> bits) & 31) as usize] as char);
        }
    }
    if bits > 0 {
        out.push(ALPHA[((buf << (5 - bits)) & 31) as usize] as char);
    }
    out
}

pub fn checksum(pubkey: &[u8; 32], version: u8) -> [u8; 2] {
    let mut m = b".onion checksum".to_vec();
    m.extend_from_slice(pubkey);
    m.push(version);
    let h = sha3_256(&m);
    [h[0], h[1]]
}

pub fn label(pubkey: &[u8; 32]) -> String {
    let mut raw = pubkey.to_vec();
    raw.extend_from_slice(&checksum(pubkey, 3));
    raw.push(3);
    base32_lower(&raw)
}
