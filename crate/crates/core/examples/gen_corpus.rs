fn main() {
    let args: Vec<String> = std::env::args().collect();
    let dir = std::path::PathBuf::from(&args[1]);
    let n: usize = args[2].parse().unwrap();
    let seed: u64 = args[3].parse().unwrap();
    burstfeat::texture::write_texture_corpus(&dir, n, 128, 128, seed).unwrap();
    println!("wrote {n} images to {}", dir.display());
}
