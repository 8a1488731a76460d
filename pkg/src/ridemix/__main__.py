from ridemix.exp_runner import main

main()
