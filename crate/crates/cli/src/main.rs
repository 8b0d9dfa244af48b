fn main() {
    println!("{}", fae_core::placeholder());
}
