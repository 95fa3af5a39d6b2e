from .sim_cli import main

main()
