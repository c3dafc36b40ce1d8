from relpool.cli import main

main()
