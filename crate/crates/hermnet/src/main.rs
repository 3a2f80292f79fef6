fn main() {
    println!("hermnet");
}
