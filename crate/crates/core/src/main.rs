fn main() -> ! {
    kcosym::cli::run()
}
